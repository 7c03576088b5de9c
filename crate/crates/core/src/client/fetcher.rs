use std::time::Duration;

use super::{Arrivals, ClientError};
use crate::model::{BatchTag, FetchedItem, SampleId};

/// Handle for one requested batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingBatch {
    pub tag: BatchTag,
    pub len: usize,
}

/// What a loader needs from the fetch layer: fire off whole batches, then
/// collect them in plan order or take arrivals in arrival order.
///
/// Implemented by the TCP client session and by the virtual-time simulator.
/// Blocking calls wait on the implementation's clock; `try_` variants never
/// wait.
pub trait BatchFetcher {
    /// Time since the fetcher was created.
    fn now(&self) -> Duration;

    /// Issues every GET of the batch without waiting for any response.
    fn request_batch(&mut self, ids: &[SampleId], tag: BatchTag) -> Result<PendingBatch, ClientError>;

    fn collect_in_order(&mut self, batch: &PendingBatch) -> Result<Vec<FetchedItem>, ClientError>;

    fn try_collect_in_order(&mut self, batch: &PendingBatch) -> Option<Result<Vec<FetchedItem>, ClientError>>;

    /// Blocks until `n` items of `epoch` have arrived, or the epoch drains.
    fn take_arrivals(&mut self, epoch: u64, n: usize) -> Arrivals;

    fn try_take_arrivals(&mut self, epoch: u64, n: usize) -> Option<Arrivals>;

    /// Lets time pass; the simulator advances its clock, the real client
    /// sleeps.
    fn pause(&mut self, d: Duration);
}
