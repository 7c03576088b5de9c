//! Network data loading for training workloads.
//!
//! The crate is organised around the path a sample takes:
//!
//! * [`store`] holds UUID-keyed data and metadata tables and serves them over
//!   TCP using the binary protocol in [`wire`].
//! * [`client`] multiplexes GET requests over many pipelined connections and
//!   collects responses into per-loader arrival pools.
//! * [`loader`] turns an epoch plan into a stream of batches, keeping a
//!   configurable number of batches in flight and optionally assembling them
//!   in arrival order.
//! * [`netsim`] injects latency, bandwidth limits and congestion, either on
//!   real sockets or in virtual time.
//! * [`splits`] builds entity-disjoint train/validation/test lists from
//!   metadata.
//! * [`bench`] drives ingestion and the tight-loop and training-simulation
//!   experiments.

pub mod bench;
pub mod client;
pub mod loader;
pub mod model;
pub mod netsim;
pub mod splits;
pub mod store;
pub mod wire;

pub use client::{BatchFetcher, ClientConfig, ClientError, StoreClient};
pub use loader::{LoaderError, PrefetchConfig, PrefetchLoader};
pub use model::{Batch, EpochPlan, Label, MetadataRecord, SampleId, SampleRecord};
pub use netsim::NetProfile;
pub use store::{MemoryBackend, StoreBackend, StoreError};
