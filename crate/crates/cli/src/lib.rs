//! Pipeline verbs behind the `qxai` binary.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{cmd_explain, cmd_report, cmd_spectra, cmd_train, run_marked, ExplainTarget, SampleSel};
pub use config::RunConfig;
