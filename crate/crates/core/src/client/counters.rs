use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::StoreClient;

/// Per-connection counters, updated by the I/O threads.
#[derive(Debug, Default)]
pub struct ConnCounters {
    pub requests: AtomicU64,
    pub responses: AtomicU64,
    pub bytes_in: AtomicU64,
    pub timeouts: AtomicU64,
}

/// Bytes received on one connection during one sampling period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputSample {
    /// End of the period, from sampler start.
    pub t: Duration,
    pub conn: usize,
    pub bytes: u64,
    pub inflight: usize,
}

/// Background thread sampling a client's counters at a fixed period.
pub struct CounterSampler {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Vec<ThroughputSample>>,
}

impl CounterSampler {
    pub fn start(client: &StoreClient, period: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let client = client.clone();
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let origin = Instant::now();
            let read = |c: &StoreClient| -> Vec<u64> {
                c.counters().iter().map(|k| k.bytes_in.load(Ordering::Relaxed)).collect()
            };
            let mut last = read(&client);
            let mut out = Vec::new();
            let mut next = origin + period;
            while !flag.load(Ordering::SeqCst) {
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                }
                let cur = read(&client);
                let inflight = client.outstanding();
                let t = next - origin;
                for (i, (&c, &l)) in cur.iter().zip(&last).enumerate() {
                    out.push(ThroughputSample { t, conn: i, bytes: c - l, inflight: inflight[i] });
                }
                last = cur;
                next += period;
            }
            out
        });
        Self { stop, handle }
    }

    pub fn stop(self) -> Vec<ThroughputSample> {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.join().unwrap_or_default()
    }
}
