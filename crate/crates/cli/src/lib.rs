//! Command-line pipeline for subgroup net benefit analyses: cohort CSV
//! ingestion, JSON run configuration, the fit, validate, evaluate and Pareto
//! stages, and report emission.

pub mod cohort_io;
pub mod config;
pub mod pipeline;
pub mod plots;
pub mod report;

pub use cohort_io::{load_cohort, read_cohort, write_cohort};
pub use config::{Overrides, Preset, RunConfig};
pub use pipeline::{run_pipeline, Artifacts, Stages};
pub use report::{emit_report, read_artifacts, write_artifacts};
