use anyhow::Result;
use clap::Args;
use spreadfit::features::diagnostics;

use crate::inputs;
use crate::manifest::Recorder;
use crate::output::{opt, Outputs};
use crate::{Context, PanelArgs};

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    panel: PanelArgs,
}

pub fn run(ctx: &Context, args: &DiagnosticsArgs) -> Result<()> {
    let mut rec = Recorder::new("diagnostics", ctx.seed, ctx.config_path.as_deref());
    let records = inputs::records(&inputs::cases_path(ctx, &args.panel)?, &mut rec)?;
    let d = diagnostics(&records);
    let mut out = Outputs::new(&ctx.out);

    let cfr: Vec<Vec<String>> = d
        .cfr_by_month
        .iter()
        .chain(&d.cfr_overall)
        .map(|r| {
            vec![
                r.age_group.to_string(),
                r.month.clone(),
                r.cases.to_string(),
                r.deaths.to_string(),
                opt(r.cfr),
            ]
        })
        .collect();
    out.csv("cfr.csv", &["age_group", "month", "cases", "deaths", "cfr"], &cfr)?;

    let asym: Vec<Vec<String>> = d
        .asymptomatic
        .iter()
        .map(|r| {
            vec![
                r.age_group.to_string(),
                r.month.clone(),
                r.total.to_string(),
                r.asymptomatic.to_string(),
                opt(r.ratio),
            ]
        })
        .collect();
    out.csv("asymptomatic.csv", &["age_group", "month", "total", "asymptomatic", "ratio"], &asym)?;
    rec.finish(&ctx.out, &out.files)?;
    Ok(())
}
