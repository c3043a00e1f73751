//! Report-producing front end over `ecg-core`: run configuration, the four
//! report commands, and JSON/CSV output.

pub mod config;
pub mod report;

pub use config::{MatrixSource, OutputFormat, RunConfig, SchemeChoice};
pub use report::{run_benchmark, Command, Report, ReportRow, SCHEMA_VERSION};
