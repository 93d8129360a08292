//! Library surface of the experiment driver, so integration tests can call
//! the commands directly while `main` stays a thin argument parser.

pub mod commands;
pub mod config;

pub use commands::{
    exit_code_for, run_allocate, run_oracle, run_report, run_search, run_sweep, AllocationReport,
    OracleReport, RunContext, SearchReport, SweepRow,
};
pub use config::ExperimentConfig;
