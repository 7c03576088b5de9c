//! Ingestion and the tight-loop and training-simulation experiments.

mod ingest;
mod metrics;
mod run;
mod synthetic;

use thiserror::Error;

use crate::client::ClientError;
use crate::loader::LoaderError;
use crate::splits::SplitError;
use crate::store::StoreError;

pub use ingest::{fetch_metadata, file_id, ingest_directory, ingest_synthetic, make_splits_cmd, IngestReport, SIDECAR};
pub use metrics::{
    coefficient_of_variation, mean, median, read_batch_csv, read_epoch_csv, BatchTime, EpochMetrics, RunMetrics,
    StallReport,
};
pub use run::{
    bin_deliveries, run_tightloop, run_tightloop_virtual, run_trainsim, run_trainsim_virtual, shard, RunOptions,
    TrainsimOptions,
};
pub use synthetic::{SyntheticBackend, SyntheticDataset, SyntheticDatasetSpec, DEFAULT_MEAN_SIZE};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Loader(#[from] LoaderError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    InvalidInput(String),
}
