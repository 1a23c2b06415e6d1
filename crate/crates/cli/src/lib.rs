//! Configuration and subcommands behind the `amkl` binary.

pub mod commands;
pub mod config;

pub use commands::{
    build_report, cmd_diagnose, cmd_report, cmd_toy, diagnose_trace, train, DiagnoseArgs,
    DiagnosisDoc, Manifest,
};
pub use config::{DataSource, Experiment, RunConfig};
