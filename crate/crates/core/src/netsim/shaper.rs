use std::time::Duration;

use rand_distr::{Distribution, Normal};

use super::profile::{NetProfile, BURST_BYTES};
use crate::model::Rng;

/// One direction of one connection: token bucket, propagation delay and
/// jitter, with FIFO delivery.
///
/// The bucket runs in debt mode: a send always drains its full size, and a
/// negative level is the serialization backlog still ahead of the send.
/// Times are seconds on the caller's clock and must be non-decreasing.
#[derive(Clone, Debug)]
pub struct LinkShaper {
    rate: f64,
    level: f64,
    last: f64,
    one_way: f64,
    jitter: Option<Normal<f64>>,
    rng: Rng,
    last_delivery: f64,
}

impl LinkShaper {
    pub fn new(rate: f64, one_way: Duration, jitter: Duration, seed: u64, stream: u64) -> Self {
        Self {
            rate,
            level: BURST_BYTES,
            last: 0.0,
            one_way: one_way.as_secs_f64(),
            jitter: (!jitter.is_zero()).then(|| Normal::new(0.0, jitter.as_secs_f64()).unwrap()),
            rng: Rng::new(seed, stream),
            last_delivery: f64::NEG_INFINITY,
        }
    }

    /// Shaper for connection `index` of `n` under `profile`. `direction`
    /// separates the jitter streams of the two directions.
    pub fn for_connection(profile: &NetProfile, index: usize, n: usize, direction: u64) -> Self {
        Self::new(
            profile.link_rate(index, n),
            profile.one_way(),
            profile.jitter,
            profile.seed,
            (index as u64) << 1 | (direction & 1),
        )
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Time the last byte of a send at `t` leaves the bucket.
    fn depart(&mut self, t: f64, bytes: usize) -> f64 {
        if self.rate.is_infinite() {
            return t;
        }
        let t = t.max(self.last);
        self.level = (self.level + (t - self.last) * self.rate).min(BURST_BYTES);
        self.last = t;
        self.level -= bytes as f64;
        if self.level >= 0.0 {
            t
        } else {
            t + -self.level / self.rate
        }
    }

    /// Returns `(departure, delivery)` for `bytes` sent at `t`.
    pub fn send(&mut self, t: f64, bytes: usize) -> (f64, f64) {
        let dep = self.depart(t, bytes);
        let jitter = match &self.jitter {
            Some(n) => n.sample(&mut self.rng).abs(),
            None => 0.0,
        };
        let deliver = (dep + self.one_way + jitter).max(self.last_delivery);
        self.last_delivery = deliver;
        (dep, deliver)
    }
}
