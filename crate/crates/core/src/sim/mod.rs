//! Slot-level simulation of the edge-cloud serving loop.

mod episode;
mod state;
mod train;

use thiserror::Error;

pub use episode::{
    derive_seed, execute_partition, expected_costs, execute_partition_with, percentiles, read_slot_csv,
    run_episode, scenario_label, stability_probe, stream_rng, write_slot_csv, Backoff, Checkpoint,
    EpisodeConfig, EpisodeOutput, Execution, MetricsReport, Percentiles, ProbePoint, ProbeResult,
    SlotRecord, Step, Trajectory, TransferOutcome, Verdict, REFERENCE_BANDWIDTH_BPS, SLOT_COLUMNS,
};
pub use train::{
    build_samples, evaluate, spec_hash, train, write_curves_csv, CurveRow, TrainCheckpoint,
    TrainError, TrainOutcome, TrainSetup, CHECKPOINT_VERSION,
};
pub use state::{FeatureNorms, HistoryWindow, RollingStat, SystemState, FEATURE_DIM, HISTORY_DIM};

use crate::learn::LearnError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error("percentiles of an empty sample")]
    EmptyPercentiles,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
