use std::collections::{HashMap, VecDeque};

use crate::model::{BatchTag, FetchedItem, SampleId};

/// An item that could not be fetched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FailedItem {
    pub id: SampleId,
    pub reason: String,
}

/// Result of taking from the arrival pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Arrivals {
    pub items: Vec<FetchedItem>,
    /// Nothing was left pending for the epoch, so fewer items than asked may
    /// have been returned.
    pub drained: bool,
    /// Failures of the epoch, reported once when it drains.
    pub failed: Vec<FailedItem>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pending,
    Arrived,
    Taken,
    Failed,
}

struct Batch {
    ids: Vec<SampleId>,
    slots: Vec<Slot>,
    items: Vec<Option<FetchedItem>>,
    settled: usize,
    taken: usize,
    failed: Vec<FailedItem>,
}

#[derive(Default)]
struct Epoch {
    order: VecDeque<(BatchTag, u32)>,
    available: usize,
    pending: usize,
    failed: Vec<FailedItem>,
}

/// Arrivals of one consumer's outstanding batches.
///
/// Supports both assembly modes: [`ArrivalPool::try_collect`] returns a whole
/// planned batch in plan order, [`ArrivalPool::try_take`] the earliest
/// arrivals of an epoch regardless of batch. Not synchronised; the real
/// client wraps it in a mutex.
#[derive(Default)]
pub struct ArrivalPool {
    batches: HashMap<BatchTag, Batch>,
    epochs: HashMap<u64, Epoch>,
}

impl ArrivalPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a batch whose items will be delivered by index.
    pub fn register(&mut self, tag: BatchTag, ids: &[SampleId]) -> bool {
        if self.batches.contains_key(&tag) {
            return false;
        }
        self.batches.insert(
            tag,
            Batch {
                ids: ids.to_vec(),
                slots: vec![Slot::Pending; ids.len()],
                items: vec![None; ids.len()],
                settled: 0,
                taken: 0,
                failed: Vec::new(),
            },
        );
        self.epochs.entry(tag.epoch).or_default().pending += ids.len();
        true
    }

    /// Records the arrival of item `index` of `tag`. Returns false for
    /// unknown, duplicate or mismatched deliveries, which are dropped.
    pub fn deliver(&mut self, tag: BatchTag, index: usize, item: FetchedItem) -> bool {
        let Some(b) = self.batches.get_mut(&tag) else { return false };
        if b.slots.get(index) != Some(&Slot::Pending) || b.ids[index] != item.id {
            return false;
        }
        b.slots[index] = Slot::Arrived;
        b.items[index] = Some(item);
        b.settled += 1;
        let e = self.epochs.get_mut(&tag.epoch).expect("epoch of registered batch");
        e.pending -= 1;
        e.available += 1;
        e.order.push_back((tag, index as u32));
        true
    }

    pub fn fail(&mut self, tag: BatchTag, index: usize, reason: impl Into<String>) -> bool {
        let Some(b) = self.batches.get_mut(&tag) else { return false };
        if b.slots.get(index) != Some(&Slot::Pending) {
            return false;
        }
        b.slots[index] = Slot::Failed;
        b.settled += 1;
        let f = FailedItem { id: b.ids[index], reason: reason.into() };
        b.failed.push(f.clone());
        let e = self.epochs.get_mut(&tag.epoch).expect("epoch of registered batch");
        e.pending -= 1;
        e.failed.push(f);
        true
    }

    pub fn is_pending(&self, tag: BatchTag, index: usize) -> bool {
        self.batches.get(&tag).and_then(|b| b.slots.get(index)) == Some(&Slot::Pending)
    }

    /// Items requested for `epoch` that have neither arrived nor failed.
    pub fn pending(&self, epoch: u64) -> usize {
        self.epochs.get(&epoch).map_or(0, |e| e.pending)
    }

    /// Arrived, not yet consumed items of `epoch`.
    pub fn available(&self, epoch: u64) -> usize {
        self.epochs.get(&epoch).map_or(0, |e| e.available)
    }

    pub fn outstanding_batches(&self) -> usize {
        self.batches.len()
    }

    /// In-order assembly: the whole batch in plan order once every item has
    /// settled, or the failures if any item failed.
    pub fn try_collect(&mut self, tag: BatchTag) -> Option<Result<Vec<FetchedItem>, Vec<FailedItem>>> {
        let b = self.batches.get(&tag)?;
        if b.settled < b.ids.len() {
            return None;
        }
        let b = self.batches.remove(&tag).unwrap();
        let e = self.epochs.get_mut(&tag.epoch).unwrap();
        let unconsumed = b.slots.iter().filter(|&&s| s == Slot::Arrived).count();
        e.available -= unconsumed;
        // Collected items are skipped lazily by `try_take`.
        if !b.failed.is_empty() {
            e.failed.retain(|f| !b.failed.contains(f));
            return Some(Err(b.failed));
        }
        self.gc_epoch(tag.epoch);
        Some(Ok(b.items.into_iter().map(|i| i.expect("settled slot without item")).collect()))
    }

    /// Out-of-order assembly: the `n` earliest arrivals of `epoch`. When
    /// nothing is pending any more, returns what is left with `drained` set.
    pub fn try_take(&mut self, epoch: u64, n: usize) -> Option<Arrivals> {
        let e = self.epochs.entry(epoch).or_default();
        let drained = e.pending == 0 && e.available <= n;
        if e.available < n && !drained {
            return None;
        }
        let want = n.min(e.available);
        let mut items = Vec::with_capacity(want);
        while items.len() < want {
            let (tag, idx) = e.order.pop_front().expect("available count out of sync");
            let Some(b) = self.batches.get_mut(&tag) else { continue };
            let idx = idx as usize;
            if b.slots[idx] != Slot::Arrived {
                continue;
            }
            b.slots[idx] = Slot::Taken;
            b.taken += 1;
            items.push(b.items[idx].take().unwrap());
            if b.taken + b.failed.len() == b.ids.len() {
                self.batches.remove(&tag);
            }
        }
        e.available -= want;
        let failed = if drained { std::mem::take(&mut e.failed) } else { Vec::new() };
        if drained {
            // Batches holding only failures are finished.
            self.batches.retain(|t, b| !(t.epoch == epoch && b.taken + b.failed.len() == b.ids.len()));
        }
        self.gc_epoch(epoch);
        Some(Arrivals { items, drained, failed })
    }

    fn gc_epoch(&mut self, epoch: u64) {
        if let Some(e) = self.epochs.get(&epoch) {
            if e.pending == 0 && e.available == 0 && e.failed.is_empty() && !self.batches.keys().any(|t| t.epoch == epoch) {
                self.epochs.remove(&epoch);
            }
        }
    }
}
