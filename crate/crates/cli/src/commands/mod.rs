pub mod diagnostics;
pub mod features;
pub mod fit;
pub mod report;
pub mod simulate;
