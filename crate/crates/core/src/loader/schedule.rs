/// How many batch requests to keep in flight.
///
/// Without incremental fill the loader keeps `buffers` batches outstanding
/// from the start. With it, the first request is a single batch and every
/// consumption triggers one replacement, plus one extra per `stride`
/// consumptions until `buffers` are outstanding: after `c` consumed batches
/// the target is `min(buffers, 1 + c / stride)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FillSchedule {
    buffers: usize,
    incremental: bool,
    stride: usize,
    total: usize,
    issued: usize,
    consumed: usize,
    /// Batches consumed in earlier chained epochs; keeps the ramp going
    /// across an epoch boundary.
    base: usize,
}

impl FillSchedule {
    pub fn new(buffers: usize, incremental: bool, stride: usize, total_batches: usize) -> Self {
        assert!(buffers >= 1 && stride >= 1);
        Self { buffers, incremental, stride, total: total_batches, issued: 0, consumed: 0, base: 0 }
    }

    /// Schedule for an epoch that follows `prev` without a restart.
    pub fn continuing(prev: &FillSchedule, total_batches: usize) -> Self {
        Self { base: prev.base + prev.consumed, ..Self::new(prev.buffers, prev.incremental, prev.stride, total_batches) }
    }

    /// Batches that should be in flight right now.
    pub fn target(&self) -> usize {
        if self.incremental {
            self.buffers.min(1 + (self.base + self.consumed) / self.stride)
        } else {
            self.buffers
        }
    }

    fn top_up(&mut self) -> usize {
        let want = self.target().saturating_sub(self.outstanding());
        let n = want.min(self.total - self.issued);
        self.issued += n;
        n
    }

    /// Requests to issue at epoch start.
    pub fn start(&mut self) -> usize {
        self.top_up()
    }

    /// Records one consumed batch and returns the requests to issue now.
    pub fn on_consumed(&mut self) -> usize {
        assert!(self.consumed < self.issued, "consumed a batch that was never requested");
        self.consumed += 1;
        self.top_up()
    }

    /// Issues up to `n` requests ahead of need, bounded by what is left.
    pub fn prefill(&mut self, n: usize) -> usize {
        let n = n.min(self.total - self.issued);
        self.issued += n;
        n
    }

    pub fn fully_issued(&self) -> bool {
        self.issued == self.total
    }

    pub fn outstanding(&self) -> usize {
        self.issued - self.consumed
    }

    pub fn issued(&self) -> usize {
        self.issued
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
