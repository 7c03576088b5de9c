//! Prefetching batch loader.
//!
//! The loader walks an [`EpochPlan`], keeping up to `prefetch_buffers` batch
//! requests in flight through a [`BatchFetcher`]. In order, it hands out the
//! planned batches one after another; out of order, it fills each batch
//! with whatever items of the epoch arrived first. Replacement requests go
//! out as soon as a batch is handed over.

mod schedule;

pub use schedule::FillSchedule;

use std::collections::VecDeque;
use std::time::Duration;

use thiserror::Error;

use crate::client::{BatchFetcher, ClientError, FailedItem, PendingBatch};
use crate::model::{make_epoch_plan, plan_consistency_check, Batch, BatchBuffer, BatchTag, EpochPlan, FetchedItem, ModelError, SampleId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefetchConfig {
    pub prefetch_buffers: usize,
    pub out_of_order: bool,
    pub incremental_fill: bool,
    /// One extra request per this many consumed batches.
    pub fill_stride: usize,
    pub batch_size: usize,
    pub drop_last: bool,
    pub seed: u64,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self {
            prefetch_buffers: 8,
            out_of_order: false,
            incremental_fill: false,
            fill_stride: 4,
            batch_size: 512,
            drop_last: false,
            seed: 0,
        }
    }
}

impl PrefetchConfig {
    pub fn validate(&self) -> Result<(), LoaderError> {
        if self.prefetch_buffers == 0 || self.fill_stride == 0 || self.batch_size == 0 {
            return Err(LoaderError::InvalidConfig(
                "prefetch_buffers, fill_stride and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoaderError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plan(#[from] ModelError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("epoch {epoch}: {} item(s) could not be fetched", .failed.len())]
    Batch { epoch: u64, failed: Vec<FailedItem> },
    #[error("epoch {0} is still in progress")]
    EpochInProgress(u64),
    #[error("out-of-order pool of epoch {epoch} drained with {got} of {want} items")]
    ShortDrain { epoch: u64, got: usize, want: usize },
}

/// Request bookkeeping after each step that issued requests. Counts run
/// over the loader's lifetime, across epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestLogEntry {
    /// Epoch being consumed when the entry was written.
    pub epoch: u64,
    pub consumed: usize,
    pub issued: usize,
    pub outstanding: usize,
}

/// Result of a non-blocking poll.
#[derive(Debug)]
pub enum BatchPoll {
    Ready(Batch),
    Pending,
    EndOfEpoch,
}

struct EpochState {
    plan: EpochPlan,
    schedule: FillSchedule,
    next_to_request: usize,
    /// In-order mode: requested, not yet emitted, in plan order.
    pending: VecDeque<PendingBatch>,
    emitted: usize,
    demand_since: Option<Duration>,
}

impl EpochState {
    fn finished(&self) -> bool {
        self.emitted == self.plan.num_batches()
    }
}

/// Batch loader over any [`BatchFetcher`].
pub struct PrefetchLoader<F: BatchFetcher> {
    fetcher: F,
    config: PrefetchConfig,
    ids: Vec<SampleId>,
    current: Option<EpochState>,
    next: Option<EpochState>,
    chain: Option<u64>,
    log: Vec<RequestLogEntry>,
    issued_total: usize,
    consumed_total: usize,
}

impl<F: BatchFetcher> PrefetchLoader<F> {
    pub fn new(fetcher: F, config: PrefetchConfig) -> Result<Self, LoaderError> {
        config.validate()?;
        Ok(Self { fetcher, config, ids: Vec::new(), current: None, next: None, chain: None, log: Vec::new(), issued_total: 0, consumed_total: 0 })
    }

    pub fn config(&self) -> &PrefetchConfig {
        &self.config
    }

    pub fn fetcher(&self) -> &F {
        &self.fetcher
    }

    pub fn fetcher_mut(&mut self) -> &mut F {
        &mut self.fetcher
    }

    pub fn into_fetcher(self) -> F {
        self.fetcher
    }

    /// Plans `epoch_index` over `ids` and issues the initial requests.
    pub fn start_epoch(&mut self, ids: &[SampleId], epoch_index: u64) -> Result<(), LoaderError> {
        if let Some(cur) = &self.current {
            if cur.plan.epoch_index == epoch_index && cur.emitted == 0 && self.ids == ids {
                // Already started by `prefetch_next_epoch`.
                return Ok(());
            }
            if !cur.finished() {
                return Err(LoaderError::EpochInProgress(cur.plan.epoch_index));
            }
        }
        if let Some(n) = &self.next {
            if n.plan.epoch_index == epoch_index && self.ids == ids {
                self.current = self.next.take();
                return Ok(());
            }
            // Its requests are already in flight.
            return Err(LoaderError::EpochInProgress(n.plan.epoch_index));
        }
        if self.chain == Some(epoch_index) {
            self.chain = None;
        }
        self.ids = ids.to_vec();
        let state = self.begin(epoch_index)?;
        self.current = Some(state);
        Ok(())
    }

    /// Plans `epoch_index` over the same ids and lets its requests follow
    /// the current epoch's without a gap: once every batch of the current
    /// epoch is requested, free buffer slots go to the next one. Each epoch
    /// keeps its own arrivals, so items never cross epochs.
    pub fn prefetch_next_epoch(&mut self, epoch_index: u64) -> Result<(), LoaderError> {
        self.chain = Some(epoch_index);
        if let Some(mut st) = self.current.take() {
            let r = self.top_up_next(&mut st);
            self.current = Some(st);
            r?;
        }
        Ok(())
    }

    fn plan_state(&self, epoch_index: u64, after: Option<&FillSchedule>) -> Result<EpochState, LoaderError> {
        let c = &self.config;
        let plan = make_epoch_plan(&self.ids, c.batch_size, c.seed, epoch_index, c.drop_last)?;
        debug_assert!(plan_consistency_check(&plan, &self.ids));
        let schedule = match after {
            Some(prev) => FillSchedule::continuing(prev, plan.num_batches()),
            None => FillSchedule::new(c.prefetch_buffers, c.incremental_fill, c.fill_stride, plan.num_batches()),
        };
        Ok(EpochState { plan, schedule, next_to_request: 0, pending: VecDeque::new(), emitted: 0, demand_since: None })
    }

    fn begin(&mut self, epoch_index: u64) -> Result<EpochState, LoaderError> {
        let mut st = self.plan_state(epoch_index, None)?;
        let n = st.schedule.start();
        self.issue(&mut st, n)?;
        self.record(st.plan.epoch_index);
        Ok(st)
    }

    fn top_up_next(&mut self, st: &mut EpochState) -> Result<(), LoaderError> {
        if !st.schedule.fully_issued() {
            return Ok(());
        }
        if let Some(e) = self.chain.take() {
            self.next = Some(self.plan_state(e, Some(&st.schedule))?);
        }
        let Some(mut next) = self.next.take() else { return Ok(()) };
        let busy = st.schedule.outstanding() + next.schedule.outstanding();
        let n = next.schedule.prefill(st.schedule.target().saturating_sub(busy));
        let r = self.issue(&mut next, n);
        self.next = Some(next);
        r
    }

    fn issue(&mut self, st: &mut EpochState, n: usize) -> Result<(), LoaderError> {
        for _ in 0..n {
            let seq = st.next_to_request;
            let tag = BatchTag::new(st.plan.epoch_index, seq as u64);
            let p = self.fetcher.request_batch(&st.plan.batches[seq], tag)?;
            st.pending.push_back(p);
            st.next_to_request += 1;
            self.issued_total += 1;
        }
        Ok(())
    }

    fn record(&mut self, epoch: u64) {
        let entry = RequestLogEntry {
            epoch,
            consumed: self.consumed_total,
            issued: self.issued_total,
            outstanding: self.issued_total - self.consumed_total,
        };
        if self.log.last().map_or(true, |l| l.issued != entry.issued) {
            self.log.push(entry);
        }
    }

    /// Blocking: the next batch, or `None` at the end of the epoch.
    pub fn next_batch(&mut self) -> Result<Option<Batch>, LoaderError> {
        self.step(true).map(|p| match p {
            BatchPoll::Ready(b) => Some(b),
            BatchPoll::EndOfEpoch => None,
            BatchPoll::Pending => unreachable!("blocking step returned pending"),
        })
    }

    /// Non-blocking variant of [`PrefetchLoader::next_batch`]. The first poll
    /// for a batch marks the start of the consumer's wait.
    pub fn poll_batch(&mut self) -> Result<BatchPoll, LoaderError> {
        self.step(false)
    }

    fn step(&mut self, block: bool) -> Result<BatchPoll, LoaderError> {
        let Some(mut st) = self.current.take() else { return Ok(BatchPoll::EndOfEpoch) };
        if st.finished() {
            self.current = self.next.take();
            if let Some(mut next) = self.current.take() {
                let n = next.schedule.start();
                let r = self.issue(&mut next, n);
                self.record(next.plan.epoch_index);
                self.current = Some(next);
                r?;
            }
            return Ok(BatchPoll::EndOfEpoch);
        }
        let now = self.fetcher.now();
        let demand = *st.demand_since.get_or_insert(now);
        let epoch = st.plan.epoch_index;

        let fetched = if self.config.out_of_order {
            let want = st.plan.batches[st.emitted].len();
            let got = if block {
                Some(self.fetcher.take_arrivals(epoch, want))
            } else {
                self.fetcher.try_take_arrivals(epoch, want)
            };
            match got {
                None => None,
                Some(a) if !a.failed.is_empty() => {
                    self.current = Some(st);
                    return Err(LoaderError::Batch { epoch, failed: a.failed });
                }
                Some(a) if a.items.len() < want => {
                    self.current = Some(st);
                    return Err(LoaderError::ShortDrain { epoch, got: a.items.len(), want });
                }
                Some(a) => Some(a.items),
            }
        } else {
            let front = *st.pending.front().expect("in-order loader with nothing outstanding");
            let got = if block {
                Some(self.fetcher.collect_in_order(&front))
            } else {
                self.fetcher.try_collect_in_order(&front)
            };
            match got {
                None => None,
                Some(Err(ClientError::Batch { failed })) => {
                    st.pending.pop_front();
                    self.current = Some(st);
                    return Err(LoaderError::Batch { epoch, failed });
                }
                Some(Err(e)) => {
                    self.current = Some(st);
                    return Err(e.into());
                }
                Some(Ok(items)) => {
                    st.pending.pop_front();
                    Some(items)
                }
            }
        };
        let Some(items) = fetched else {
            self.current = Some(st);
            return Ok(BatchPoll::Pending);
        };
        let batch = self.emit(&mut st, items, demand)?;
        self.current = Some(st);
        Ok(BatchPoll::Ready(batch))
    }

    fn emit(&mut self, st: &mut EpochState, items: Vec<FetchedItem>, demand: Duration) -> Result<Batch, LoaderError> {
        let done = self.fetcher.now();
        let batch = Batch {
            epoch_index: st.plan.epoch_index,
            sequence_index: st.emitted as u64,
            buffer: BatchBuffer::assemble(&items),
            assembly_time: done.saturating_sub(demand),
        };
        st.emitted += 1;
        st.demand_since = None;
        if self.config.out_of_order {
            st.pending.pop_front();
        }
        self.consumed_total += 1;
        let n = st.schedule.on_consumed();
        self.issue(st, n)?;
        self.top_up_next(st)?;
        self.record(st.plan.epoch_index);
        Ok(batch)
    }

    /// Iterator over the batches of one epoch. Leaves the loader ready for
    /// the next epoch.
    pub fn epoch_iter<'a>(
        &'a mut self,
        ids: &[SampleId],
        epoch_index: u64,
    ) -> Result<impl Iterator<Item = Result<Batch, LoaderError>> + 'a, LoaderError> {
        self.start_epoch(ids, epoch_index)?;
        let mut done = false;
        Ok(std::iter::from_fn(move || {
            if done {
                return None;
            }
            match self.next_batch() {
                Ok(Some(b)) => Some(Ok(b)),
                Ok(None) => {
                    done = true;
                    None
                }
                Err(e) => {
                    done = true;
                    Some(Err(e))
                }
            }
        }))
    }

    /// The current epoch's plan.
    pub fn plan(&self) -> Option<&EpochPlan> {
        self.current.as_ref().map(|s| &s.plan)
    }

    /// Batches requested but not yet handed out, including any requested
    /// for the next epoch.
    pub fn outstanding(&self) -> usize {
        let of = |s: &Option<EpochState>| s.as_ref().map_or(0, |s| s.schedule.outstanding());
        of(&self.current) + of(&self.next)
    }

    pub fn request_log(&self) -> &[RequestLogEntry] {
        &self.log
    }

    pub fn clear_request_log(&mut self) {
        self.log.clear();
    }
}

/// Largest `(issued - 1) / consumed` over the logged steps, leaving out
/// the initial request, and whether `issued <= consumed * (1 + 1/stride) + 1`
/// held throughout.
pub fn transient_request_ratio(log: &[RequestLogEntry], stride: usize) -> (f64, bool) {
    let mut max_ratio: f64 = 0.0;
    let mut ok = true;
    for e in log {
        if e.consumed > 0 {
            max_ratio = max_ratio.max(e.issued.saturating_sub(1) as f64 / e.consumed as f64);
        }
        // issued <= consumed * (stride + 1) / stride + 1, in integers.
        if e.issued * stride > e.consumed * (stride + 1) + stride {
            ok = false;
        }
    }
    (max_ratio, ok)
}
