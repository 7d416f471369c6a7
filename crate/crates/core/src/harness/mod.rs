//! Configuration-driven experiment runner behind the `odlab` binary.

pub mod commands;
pub mod config;
mod train;

pub use commands::{
    cmd_analyze, cmd_corrupt, cmd_sweep, cmd_train, sweep_config, train_config, CorruptArgs,
    CorruptionReport, SweepParam, SweepRow, TrainOutcome,
};
pub use config::{desk_network, DataSource, DatasetConfig, ExperimentConfig, NetworkConfig};
pub use train::{Evaluation, RunRecord, Trainer};
