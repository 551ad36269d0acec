//! Experiment orchestration: JSON configs, seeded replications, CSV/JSON
//! emission, the four-panel scenario set, and the naive per-row-average
//! baseline.

mod config;
mod naive;
mod run;
mod scenarios;

pub use config::{
    ByzantineConfig, ChainConfig, ChainModeConfig, ExperimentConfig, ExperimentPlan,
    FunctionConfig, RunConfig, UniverseConfig,
};
pub use naive::{naive_estimate, PerNodeAverages};
pub use run::{
    aggregate_records, read_trajectory_csv, run_experiment, write_experiment, AggregateRecord,
    ExperimentResult, ReplicationResult,
};
pub use scenarios::{fig1_scenarios, run_fig1, Fig1Scenario};
