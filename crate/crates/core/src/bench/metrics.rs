use std::fs;
use std::path::Path;
use std::time::Duration;

use crate::client::ThroughputSample;

use super::BenchError;

/// One epoch of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub items: u64,
    pub bytes: u64,
    /// From the end of the previous epoch (or the start of the run) to the
    /// last batch of this one.
    pub duration: Duration,
    /// Wrapping sum of item checksums; independent of delivery order.
    pub checksum: u64,
    pub partial: bool,
}

impl EpochMetrics {
    pub fn bytes_per_sec(&self) -> f64 {
        self.bytes as f64 / self.duration.as_secs_f64().max(1e-12)
    }

    pub fn items_per_sec(&self) -> f64 {
        self.items as f64 / self.duration.as_secs_f64().max(1e-12)
    }
}

/// One emitted batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTime {
    pub consumer: usize,
    pub epoch: u64,
    pub sequence: u64,
    /// Emission time from the start of the run.
    pub at: Duration,
    pub assembly: Duration,
    pub items: usize,
    pub bytes: usize,
}

/// Consumer-side summary of a training simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct StallReport {
    pub consumers: usize,
    pub per_consumer_rate: f64,
    pub achieved_items_per_sec: f64,
    /// Achieved rate over `consumers * per_consumer_rate`.
    pub utilization: f64,
    /// Time consumers spent waiting for a batch over their total time.
    pub stall_fraction: f64,
    pub makespan: Duration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub batches: Vec<BatchTime>,
    pub connections: Vec<ThroughputSample>,
    pub sample_period: Duration,
    pub transient_request_ratio: f64,
    pub transient_ok: bool,
    pub stall: Option<StallReport>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Standard deviation over mean, population form.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.is_empty() || m == 0.0 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    var.sqrt() / m
}

impl RunMetrics {
    pub fn mean_epoch_throughput(&self) -> f64 {
        mean(&self.epochs.iter().map(EpochMetrics::bytes_per_sec).collect::<Vec<_>>())
    }

    pub fn total_bytes(&self) -> u64 {
        self.epochs.iter().map(|e| e.bytes).sum()
    }

    /// Assembly times in seconds, skipping each consumer's first `skip`
    /// batches.
    pub fn assembly_after(&self, skip: usize) -> Vec<f64> {
        let mut seen = std::collections::HashMap::new();
        self.batches
            .iter()
            .filter(|b| {
                let n = seen.entry(b.consumer).or_insert(0usize);
                *n += 1;
                *n > skip
            })
            .map(|b| b.assembly.as_secs_f64())
            .collect()
    }

    /// Aggregate bytes/s received per sampling period, summed over
    /// connections, from the first to the last period with traffic.
    pub fn aggregate_series(&self) -> Vec<f64> {
        if self.connections.is_empty() || self.sample_period.is_zero() {
            return Vec::new();
        }
        let p = self.sample_period.as_secs_f64();
        let slot = |t: Duration| ((t.as_secs_f64() / p).round() as usize).saturating_sub(1);
        let n = self.connections.iter().map(|s| slot(s.t)).max().unwrap_or(0) + 1;
        let mut bins = vec![0u64; n];
        for s in &self.connections {
            bins[slot(s.t)] += s.bytes;
        }
        let first = bins.iter().position(|&b| b > 0).unwrap_or(0);
        let last = bins.iter().rposition(|&b| b > 0).unwrap_or(0);
        bins[first..=last].iter().map(|&b| b as f64 / p).collect()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
        let csv_err = |e: csv::Error| BenchError::Io(e.to_string());

        let mut w = csv::Writer::from_path(dir.join("metrics.csv")).map_err(csv_err)?;
        w.write_record(["epoch", "items", "bytes", "duration_s", "bytes_per_s", "items_per_s", "checksum", "partial"])
            .map_err(csv_err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.items.to_string(),
                e.bytes.to_string(),
                format!("{:.9}", e.duration.as_secs_f64()),
                format!("{:.3}", e.bytes_per_sec()),
                format!("{:.3}", e.items_per_sec()),
                format!("{:016x}", e.checksum),
                e.partial.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| BenchError::Io(e.to_string()))?;

        let mut w = csv::Writer::from_path(dir.join("batch_times.csv")).map_err(csv_err)?;
        w.write_record(["consumer", "epoch", "sequence", "at_s", "assembly_s", "items", "bytes"]).map_err(csv_err)?;
        for b in &self.batches {
            w.write_record([
                b.consumer.to_string(),
                b.epoch.to_string(),
                b.sequence.to_string(),
                format!("{:.9}", b.at.as_secs_f64()),
                format!("{:.9}", b.assembly.as_secs_f64()),
                b.items.to_string(),
                b.bytes.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| BenchError::Io(e.to_string()))?;

        let mut w = csv::Writer::from_path(dir.join("conn_throughput.csv")).map_err(csv_err)?;
        w.write_record(["t_s", "conn", "bytes", "bytes_per_s", "inflight"]).map_err(csv_err)?;
        let p = self.sample_period.as_secs_f64().max(1e-12);
        for s in &self.connections {
            w.write_record([
                format!("{:.6}", s.t.as_secs_f64()),
                s.conn.to_string(),
                s.bytes.to_string(),
                format!("{:.3}", s.bytes as f64 / p),
                s.inflight.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| BenchError::Io(e.to_string()))?;

        fs::write(dir.join("summary.txt"), self.summary()).map_err(|e| BenchError::Io(e.to_string()))
    }

    /// key=value summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let skip = 20;
        let asm = self.assembly_after(skip);
        s += &format!("epochs={}\n", self.epochs.len());
        s += &format!("partial={}\n", self.epochs.iter().any(|e| e.partial));
        s += &format!("total_bytes={}\n", self.total_bytes());
        s += &format!("mean_epoch_bytes_per_s={:.3}\n", self.mean_epoch_throughput());
        s += &format!("mean_epoch_items_per_s={:.3}\n", mean(&self.epochs.iter().map(EpochMetrics::items_per_sec).collect::<Vec<_>>()));
        s += &format!("assembly_median_s={:.6}\n", median(&asm));
        s += &format!("assembly_max_s={:.6}\n", asm.iter().cloned().fold(0.0, f64::max));
        s += &format!("throughput_cv={:.4}\n", coefficient_of_variation(&self.aggregate_series()));
        s += &format!("transient_request_ratio={:.4}\n", self.transient_request_ratio);
        s += &format!("transient_ok={}\n", self.transient_ok);
        if let Some(st) = &self.stall {
            s += &format!("consumers={}\n", st.consumers);
            s += &format!("per_consumer_rate={}\n", st.per_consumer_rate);
            s += &format!("achieved_items_per_s={:.3}\n", st.achieved_items_per_sec);
            s += &format!("utilization={:.4}\n", st.utilization);
            s += &format!("stall_fraction={:.4}\n", st.stall_fraction);
            s += &format!("makespan_s={:.6}\n", st.makespan.as_secs_f64());
        }
        s
    }
}

/// Rows of a `metrics.csv` written by [`RunMetrics::write_csv`].
pub fn read_epoch_csv(path: &Path) -> Result<Vec<EpochMetrics>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, row) in r.records().enumerate() {
        let row = row.map_err(|e| BenchError::Io(e.to_string()))?;
        let bad = || BenchError::Io(format!("{}: malformed row {}", path.display(), n + 2));
        let get = |i: usize| row.get(i).ok_or_else(bad);
        out.push(EpochMetrics {
            epoch: get(0)?.parse().map_err(|_| bad())?,
            items: get(1)?.parse().map_err(|_| bad())?,
            bytes: get(2)?.parse().map_err(|_| bad())?,
            duration: Duration::from_secs_f64(get(3)?.parse().map_err(|_| bad())?),
            checksum: u64::from_str_radix(get(6)?, 16).map_err(|_| bad())?,
            partial: get(7)?.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Rows of a `batch_times.csv`.
pub fn read_batch_csv(path: &Path) -> Result<Vec<BatchTime>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, row) in r.records().enumerate() {
        let row = row.map_err(|e| BenchError::Io(e.to_string()))?;
        let bad = || BenchError::Io(format!("{}: malformed row {}", path.display(), n + 2));
        let get = |i: usize| row.get(i).ok_or_else(bad);
        let secs = |i: usize| -> Result<Duration, BenchError> { Ok(Duration::from_secs_f64(get(i)?.parse().map_err(|_| bad())?)) };
        out.push(BatchTime {
            consumer: get(0)?.parse().map_err(|_| bad())?,
            epoch: get(1)?.parse().map_err(|_| bad())?,
            sequence: get(2)?.parse().map_err(|_| bad())?,
            at: secs(3)?,
            assembly: secs(4)?,
            items: get(5)?.parse().map_err(|_| bad())?,
            bytes: get(6)?.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
