use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::client::{BatchFetcher, ClientConfig, CounterSampler, StoreClient, ThroughputSample};
use crate::loader::{transient_request_ratio, BatchPoll, LoaderError, PrefetchConfig, PrefetchLoader};
use crate::model::SampleId;
use crate::netsim::{NetProfile, SimConfig, SimDelivery, SimNetwork};
use crate::store::StoreBackend;

use super::metrics::{BatchTime, EpochMetrics, RunMetrics, StallReport};
use super::BenchError;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub prefetch: PrefetchConfig,
    pub epochs: u64,
    pub sample_period: Duration,
    /// Set to end the run early; the interrupted epoch is flagged partial.
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { prefetch: PrefetchConfig::default(), epochs: 1, sample_period: Duration::from_millis(100), stop: None }
    }
}

impl RunOptions {
    fn stopped(&self) -> bool {
        self.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst))
    }
}

#[derive(Clone, Debug)]
pub struct TrainsimOptions {
    pub run: RunOptions,
    pub consumers: usize,
    /// Items per second per consumer; infinity makes consumers free.
    pub per_consumer_rate: f64,
}

impl Default for TrainsimOptions {
    fn default() -> Self {
        Self { run: RunOptions::default(), consumers: 8, per_consumer_rate: 1400.0 }
    }
}

impl TrainsimOptions {
    fn work(&self, items: usize) -> Duration {
        if self.per_consumer_rate.is_infinite() {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(items as f64 / self.per_consumer_rate)
        }
    }
}

/// Consumes epochs as fast as the loader delivers them.
fn drive_tightloop<F: BatchFetcher>(
    loader: &mut PrefetchLoader<F>,
    ids: &[SampleId],
    opts: &RunOptions,
) -> Result<(Vec<EpochMetrics>, Vec<BatchTime>), LoaderError> {
    let mut epochs = Vec::new();
    let mut batches = Vec::new();
    let mut mark = loader.fetcher().now();
    for e in 0..opts.epochs {
        loader.start_epoch(ids, e)?;
        if e + 1 < opts.epochs {
            loader.prefetch_next_epoch(e + 1)?;
        }
        let mut m = EpochMetrics { epoch: e, items: 0, bytes: 0, duration: Duration::ZERO, checksum: 0, partial: false };
        loop {
            if opts.stopped() {
                m.partial = true;
                break;
            }
            let Some(b) = loader.next_batch()? else { break };
            m.items += b.len() as u64;
            m.bytes += b.total_bytes() as u64;
            m.checksum = m.checksum.wrapping_add(b.checksum());
            batches.push(BatchTime {
                consumer: 0,
                epoch: e,
                sequence: b.sequence_index,
                at: loader.fetcher().now(),
                assembly: b.assembly_time,
                items: b.len(),
                bytes: b.total_bytes(),
            });
        }
        let now = loader.fetcher().now();
        m.duration = now - mark;
        mark = now;
        let partial = m.partial;
        epochs.push(m);
        if partial {
            break;
        }
    }
    Ok((epochs, batches))
}

/// Tight loop against a running store over TCP.
pub fn run_tightloop(client: ClientConfig, table: &str, ids: &[SampleId], opts: &RunOptions) -> Result<RunMetrics, BenchError> {
    let client = StoreClient::connect(client)?;
    let mut loader = PrefetchLoader::new(client.session(table), opts.prefetch.clone())?;
    let sampler = CounterSampler::start(&client, opts.sample_period);
    let result = drive_tightloop(&mut loader, ids, opts);
    let connections = sampler.stop();
    let (epochs, batches) = result?;
    let (ratio, ok) = transient_request_ratio(loader.request_log(), opts.prefetch.fill_stride);
    Ok(RunMetrics {
        epochs,
        batches,
        connections,
        sample_period: opts.sample_period,
        transient_request_ratio: ratio,
        transient_ok: ok,
        stall: None,
    })
}

/// Per-connection bytes per period from a simulator delivery log. In-flight
/// counts are not sampled in virtual time and are reported as zero.
pub fn bin_deliveries(log: &[SimDelivery], connections: usize, period: Duration) -> Vec<ThroughputSample> {
    let Some(last) = log.iter().map(|d| d.time).max() else { return Vec::new() };
    let p = period.as_secs_f64();
    let n = (last.as_secs_f64() / p).floor() as usize + 1;
    let mut bins = vec![0u64; n * connections];
    for d in log {
        let slot = ((d.time.as_secs_f64() / p).floor() as usize).min(n - 1);
        bins[slot * connections + d.conn] += d.bytes as u64;
    }
    bins.iter()
        .enumerate()
        .map(|(i, &bytes)| ThroughputSample {
            t: period * (i / connections + 1) as u32,
            conn: i % connections,
            bytes,
            inflight: 0,
        })
        .collect()
}

/// Tight loop over a virtual-time network.
pub fn run_tightloop_virtual(
    backend: Arc<dyn StoreBackend>,
    table: &str,
    ids: &[SampleId],
    profile: &NetProfile,
    connections: usize,
    opts: &RunOptions,
) -> Result<RunMetrics, BenchError> {
    let net = SimNetwork::new(SimConfig::new(profile.clone(), connections), backend);
    let mut loader = PrefetchLoader::new(net.session(table), opts.prefetch.clone())?;
    let (epochs, batches) = drive_tightloop(&mut loader, ids, opts)?;
    let (ratio, ok) = transient_request_ratio(loader.request_log(), opts.prefetch.fill_stride);
    Ok(RunMetrics {
        epochs,
        batches,
        connections: bin_deliveries(&net.deliveries(), connections, opts.sample_period),
        sample_period: opts.sample_period,
        transient_request_ratio: ratio,
        transient_ok: ok,
        stall: None,
    })
}

/// Every `consumers`-th id, starting at `index`.
pub fn shard(ids: &[SampleId], index: usize, consumers: usize) -> Vec<SampleId> {
    ids.iter().skip(index).step_by(consumers.max(1)).copied().collect()
}

struct Consumer<F: BatchFetcher> {
    loader: PrefetchLoader<F>,
    ids: Vec<SampleId>,
    epoch: u64,
    busy_until: Duration,
    waiting_since: Option<Duration>,
    waited: Duration,
    finish: Duration,
    done: bool,
}

#[derive(Default)]
struct Tally {
    epochs: Vec<EpochMetrics>,
    /// Per epoch, the latest end over consumers.
    ends: Vec<Duration>,
    batches: Vec<BatchTime>,
}

impl Tally {
    fn epoch(&mut self, e: u64) -> &mut EpochMetrics {
        let e = e as usize;
        while self.epochs.len() <= e {
            let n = self.epochs.len() as u64;
            self.epochs.push(EpochMetrics { epoch: n, items: 0, bytes: 0, duration: Duration::ZERO, checksum: 0, partial: false });
            self.ends.push(Duration::ZERO);
        }
        &mut self.epochs[e]
    }

    fn finish(mut self) -> (Vec<EpochMetrics>, Vec<BatchTime>) {
        let mut prev = Duration::ZERO;
        for (m, &end) in self.epochs.iter_mut().zip(&self.ends) {
            m.duration = end.saturating_sub(prev);
            prev = end;
        }
        (self.epochs, self.batches)
    }
}

fn stall_report(consumers: &[(Duration, Duration)], items: u64, opts: &TrainsimOptions) -> StallReport {
    let makespan = consumers.iter().map(|c| c.1).max().unwrap_or_default();
    let waited: f64 = consumers.iter().map(|c| c.0.as_secs_f64()).sum();
    let total: f64 = consumers.iter().map(|c| c.1.as_secs_f64()).sum();
    let achieved = items as f64 / makespan.as_secs_f64().max(1e-12);
    StallReport {
        consumers: opts.consumers,
        per_consumer_rate: opts.per_consumer_rate,
        achieved_items_per_sec: achieved,
        utilization: achieved / (opts.consumers as f64 * opts.per_consumer_rate),
        stall_fraction: if total > 0.0 { waited / total } else { 0.0 },
        makespan,
    }
}

/// Training simulation in virtual time: `consumers` loaders share one
/// network, each paired with a consumer that spends `batch / rate` seconds
/// on every batch.
pub fn run_trainsim_virtual(
    backend: Arc<dyn StoreBackend>,
    table: &str,
    ids: &[SampleId],
    profile: &NetProfile,
    connections: usize,
    opts: &TrainsimOptions,
) -> Result<RunMetrics, BenchError> {
    if opts.consumers == 0 || !(opts.per_consumer_rate > 0.0) {
        return Err(BenchError::InvalidInput("need at least one consumer and a positive rate".into()));
    }
    let epochs = opts.run.epochs;
    let net = SimNetwork::new(SimConfig::new(profile.clone(), connections), backend);
    let mut consumers = Vec::with_capacity(opts.consumers);
    for k in 0..opts.consumers {
        let ids = shard(ids, k, opts.consumers);
        let mut loader = PrefetchLoader::new(net.session(table), opts.run.prefetch.clone())?;
        if epochs > 0 {
            loader.start_epoch(&ids, 0)?;
            if epochs > 1 {
                loader.prefetch_next_epoch(1)?;
            }
        }
        consumers.push(Consumer {
            loader,
            ids,
            epoch: 0,
            busy_until: Duration::ZERO,
            waiting_since: None,
            waited: Duration::ZERO,
            finish: Duration::ZERO,
            done: epochs == 0,
        });
    }

    let mut tally = Tally::default();
    let mut items = 0u64;
    loop {
        let now = net.now();
        for (k, c) in consumers.iter_mut().enumerate() {
            while !c.done && c.busy_until <= now {
                if opts.run.stopped() {
                    tally.epoch(c.epoch).partial = true;
                    c.done = true;
                    break;
                }
                match c.loader.poll_batch()? {
                    BatchPoll::Ready(b) => {
                        if let Some(since) = c.waiting_since.take() {
                            c.waited += now - since;
                        }
                        let m = tally.epoch(c.epoch);
                        m.items += b.len() as u64;
                        m.bytes += b.total_bytes() as u64;
                        m.checksum = m.checksum.wrapping_add(b.checksum());
                        items += b.len() as u64;
                        tally.batches.push(BatchTime {
                            consumer: k,
                            epoch: c.epoch,
                            sequence: b.sequence_index,
                            at: now,
                            assembly: b.assembly_time,
                            items: b.len(),
                            bytes: b.total_bytes(),
                        });
                        c.busy_until = now + opts.work(b.len());
                        c.finish = c.busy_until;
                    }
                    BatchPoll::Pending => {
                        c.waiting_since.get_or_insert(now);
                        break;
                    }
                    BatchPoll::EndOfEpoch => {
                        tally.epoch(c.epoch);
                        let end = &mut tally.ends[c.epoch as usize];
                        *end = (*end).max(c.finish);
                        c.epoch += 1;
                        if c.epoch == epochs {
                            c.done = true;
                        } else {
                            c.loader.start_epoch(&c.ids, c.epoch)?;
                            if c.epoch + 1 < epochs {
                                c.loader.prefetch_next_epoch(c.epoch + 1)?;
                            }
                        }
                    }
                }
            }
        }
        if consumers.iter().all(|c| c.done) {
            break;
        }
        let wake = consumers.iter().filter(|c| !c.done && c.busy_until > now).map(|c| c.busy_until).min();
        match (net.next_event_time(), wake) {
            (Some(ev), Some(w)) if w < ev => net.advance_to(w),
            (Some(_), _) => {
                net.step();
            }
            (None, Some(w)) => net.advance_to(w),
            (None, None) => return Err(BenchError::InvalidInput("simulation stalled with consumers waiting".into())),
        }
    }

    let per: Vec<(Duration, Duration)> = consumers.iter().map(|c| (c.waited, c.finish)).collect();
    let stall = stall_report(&per, items, opts);
    let (ratio, ok) = consumers
        .iter()
        .map(|c| transient_request_ratio(c.loader.request_log(), opts.run.prefetch.fill_stride))
        .fold((0.0f64, true), |(r, o), (r2, o2)| (r.max(r2), o && o2));
    let (epochs, batches) = tally.finish();
    Ok(RunMetrics {
        epochs,
        batches,
        connections: bin_deliveries(&net.deliveries(), connections, opts.run.sample_period),
        sample_period: opts.run.sample_period,
        transient_request_ratio: ratio,
        transient_ok: ok,
        stall: Some(stall),
    })
}

/// Training simulation against a running store: one thread per consumer,
/// all sharing one client, pacing with sleeps.
pub fn run_trainsim(client: ClientConfig, table: &str, ids: &[SampleId], opts: &TrainsimOptions) -> Result<RunMetrics, BenchError> {
    if opts.consumers == 0 || !(opts.per_consumer_rate > 0.0) {
        return Err(BenchError::InvalidInput("need at least one consumer and a positive rate".into()));
    }
    let client = StoreClient::connect(client)?;
    let sampler = CounterSampler::start(&client, opts.run.sample_period);
    let origin = std::time::Instant::now();
    let results: Vec<Result<_, BenchError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..opts.consumers)
            .map(|k| {
                let client = client.clone();
                let ids = shard(ids, k, opts.consumers);
                s.spawn(move || -> Result<_, BenchError> {
                    let mut loader = PrefetchLoader::new(client.session(table), opts.run.prefetch.clone())?;
                    let mut tally = Tally::default();
                    let mut waited = Duration::ZERO;
                    let mut finish = Duration::ZERO;
                    for e in 0..opts.run.epochs {
                        loader.start_epoch(&ids, e)?;
                        if e + 1 < opts.run.epochs {
                            loader.prefetch_next_epoch(e + 1)?;
                        }
                        loop {
                            if opts.run.stopped() {
                                tally.epoch(e).partial = true;
                                break;
                            }
                            let asked = origin.elapsed();
                            let Some(b) = loader.next_batch()? else { break };
                            let now = origin.elapsed();
                            waited += now - asked;
                            let m = tally.epoch(e);
                            m.items += b.len() as u64;
                            m.bytes += b.total_bytes() as u64;
                            m.checksum = m.checksum.wrapping_add(b.checksum());
                            tally.batches.push(BatchTime {
                                consumer: k,
                                epoch: e,
                                sequence: b.sequence_index,
                                at: now,
                                assembly: b.assembly_time,
                                items: b.len(),
                                bytes: b.total_bytes(),
                            });
                            thread::sleep(opts.work(b.len()));
                            finish = origin.elapsed();
                        }
                        tally.epoch(e);
                        tally.ends[e as usize] = finish;
                        if opts.run.stopped() {
                            break;
                        }
                    }
                    let log = transient_request_ratio(loader.request_log(), opts.run.prefetch.fill_stride);
                    Ok((tally, waited, finish, log))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("consumer thread panicked")).collect()
    });
    let connections = sampler.stop();

    let mut merged = Tally::default();
    let mut per = Vec::new();
    let (mut ratio, mut ok) = (0.0f64, true);
    let mut items = 0;
    for r in results {
        let (t, waited, finish, (r2, o2)) = r?;
        per.push((waited, finish));
        ratio = ratio.max(r2);
        ok &= o2;
        for (m, end) in t.epochs.iter().zip(&t.ends) {
            let g = merged.epoch(m.epoch);
            g.items += m.items;
            g.bytes += m.bytes;
            g.checksum = g.checksum.wrapping_add(m.checksum);
            g.partial |= m.partial;
            items += m.items;
            let ge = &mut merged.ends[m.epoch as usize];
            *ge = (*ge).max(*end);
        }
        merged.batches.extend(t.batches);
    }
    merged.batches.sort_by_key(|b| b.at);
    let stall = stall_report(&per, items, opts);
    let (epochs, batches) = merged.finish();
    Ok(RunMetrics {
        epochs,
        batches,
        connections,
        sample_period: opts.run.sample_period,
        transient_request_ratio: ratio,
        transient_ok: ok,
        stall: Some(stall),
    })
}
