//! Shared domain types: sample identifiers, records, epoch plans, batches and
//! the deterministic generator everything else draws from.

mod batch;
mod id;
mod plan;
mod record;
pub(crate) mod rng;

pub use batch::{item_checksum, Batch, BatchBuffer, BatchEntry, BatchItem, BatchTag, FetchedItem};
pub use id::{IdGenerator, SampleId};
pub use plan::{make_epoch_plan, parse_plan_text, plan_consistency_check, EpochPlan};
pub use record::{Label, LabelKind, MetadataRecord, SampleRecord};
pub use rng::Rng;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid sample id {0:?}: expected 36-character lowercase hyphenated form")]
    BadId(String),
}
