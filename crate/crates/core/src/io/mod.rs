//! Data ingestion, configuration and the replication harness.

pub mod config;
pub mod csv;
pub mod replicate;

pub use self::config::ExperimentConfig;
pub use self::csv::{load_series_csv, write_table, LoadedSeries, OutputHeader};
pub use self::replicate::{
    run_replications, system_study, Experiment, ReplicationReport, SystemStudyReport,
};
