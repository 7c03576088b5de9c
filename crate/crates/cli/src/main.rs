use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use netloader::bench::{
    ingest_directory, ingest_synthetic, make_splits_cmd, mean, median, read_batch_csv, read_epoch_csv, run_tightloop,
    run_tightloop_virtual, run_trainsim, run_trainsim_virtual, RunMetrics, RunOptions, SyntheticBackend,
    SyntheticDataset, SyntheticDatasetSpec, TrainsimOptions, DEFAULT_MEAN_SIZE, SIDECAR,
};
use netloader::model::SampleId;
use netloader::splits::{parse_split_spec, read_uuid_list, SplitSpec};
use netloader::store::{serve, AdminClient, MemoryBackend, ServerConfig, StoreBackend};
use netloader::{ClientConfig, NetProfile, PrefetchConfig};

const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "netloader", version, about = "Network data loader: store, ingestion, splits and loading benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the blob store server until interrupted.
    Serve(ServeArgs),
    /// Insert a directory (with metadata.csv) or a synthetic dataset.
    Ingest(IngestArgs),
    /// Write a synthetic dataset to a directory as files plus metadata.csv.
    Synth(SynthArgs),
    /// Build entity-disjoint splits from the store's metadata.
    Split(SplitArgs),
    /// Read epochs as fast as possible.
    Tightloop(TightloopArgs),
    /// Feed rate-limited simulated consumers.
    Trainsim(TrainsimArgs),
    /// Summarise result directories written with --out.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:9042")]
    bind: String,
    /// Per-connection cap on unanswered requests.
    #[arg(long, default_value_t = 1024)]
    max_inflight: usize,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Loaded at start if present, written on shutdown.
    #[arg(long)]
    snapshot_path: Option<PathBuf>,
    /// Shape every accepted connection: preset name or profile file.
    #[arg(long)]
    netprofile: Option<String>,
    /// Connection count the congested subset is drawn from.
    #[arg(long)]
    connections: Option<usize>,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, default_value = "bench.data")]
    table: String,
    #[arg(long, default_value = "bench.metadata")]
    meta_table: String,
}

#[derive(Args)]
struct SynthSpecArgs {
    #[arg(long, default_value_t = 20_000)]
    num_samples: usize,
    #[arg(long, default_value_t = DEFAULT_MEAN_SIZE)]
    mean_size: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 1000)]
    num_classes: usize,
    #[arg(long, default_value_t = 500)]
    num_entities: usize,
    /// Zipf-like exponent over class ranks; 0 is uniform.
    #[arg(long, default_value_t = 0.0)]
    class_skew: f64,
}

impl SynthSpecArgs {
    fn spec(&self, seed: u64) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_samples: self.num_samples,
            mean_size: self.mean_size,
            sigma: self.sigma,
            num_classes: self.num_classes,
            num_entities: self.num_entities,
            class_skew: self.class_skew,
            seed,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, default_value = "127.0.0.1:9042")]
    endpoint: String,
    /// Directory of files with a metadata.csv sidecar.
    #[arg(long, conflicts_with = "synthetic")]
    dir: Option<PathBuf>,
    /// Generate and insert a synthetic dataset instead.
    #[arg(long)]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthSpecArgs,
    #[command(flatten)]
    tables: TableArgs,
    #[arg(long, default_value_t = 8)]
    parallelism: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the ingested ids, one per line.
    #[arg(long)]
    ids_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthSpecArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value = "127.0.0.1:9042")]
    endpoint: String,
    /// key=value spec file; overrides --ratios.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench.metadata")]
    meta_table: String,
    #[arg(long, default_value = "splits")]
    out: PathBuf,
}

#[derive(Args)]
struct LoadArgs {
    /// Store to read from. Without it an embedded store serves a synthetic
    /// dataset.
    #[arg(long)]
    endpoint: Option<String>,
    /// Run on the virtual-time simulator instead of sockets.
    #[arg(long = "virtual", conflicts_with = "endpoint")]
    virtual_time: bool,
    /// Ids to read, one per line; default is every id in the table.
    #[arg(long)]
    uuids: Option<PathBuf>,
    /// Preset (identity, low, med, high, high-congested) or profile file.
    #[arg(long, default_value = "identity")]
    profile: String,
    #[arg(long, value_enum, default_value = "on")]
    ooo: Switch,
    #[arg(long, value_enum, default_value = "on")]
    incremental: Switch,
    #[arg(long, default_value_t = 8)]
    buffers: usize,
    #[arg(long, default_value_t = 4)]
    fill_stride: usize,
    #[arg(long, default_value_t = 16)]
    io_workers: usize,
    #[arg(long, default_value_t = 2)]
    connections_per_worker: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long)]
    drop_last: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    epochs: u64,
    /// Directory for metrics.csv, batch_times.csv, conn_throughput.csv and
    /// summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 when a run property is violated.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    tables: TableArgs,
    /// Synthetic dataset for embedded and virtual runs.
    #[command(flatten)]
    synth: SynthSpecArgs,
    /// Serve real pseudo-random bytes instead of zero-filled blobs.
    #[arg(long)]
    full_data: bool,
}

#[derive(Args)]
struct TightloopArgs {
    #[command(flatten)]
    load: LoadArgs,
}

#[derive(Args)]
struct TrainsimArgs {
    #[command(flatten)]
    load: LoadArgs,
    #[arg(long, default_value_t = 8)]
    consumers: usize,
    /// Items per second per consumer.
    #[arg(long, default_value_t = 1400.0)]
    rate: f64,
    /// Lowest acceptable utilization under --check.
    #[arg(long, default_value_t = 0.90)]
    min_utilization: f64,
}

#[derive(Args)]
struct ReportArgs {
    dirs: Vec<PathBuf>,
    /// Batches per consumer left out of the assembly-time statistics.
    #[arg(long, default_value_t = 20)]
    skip: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Tightloop(a) => cmd_load(a.load, None),
        Cmd::Trainsim(a) => {
            let t = (a.consumers, a.rate, a.min_utilization);
            cmd_load(a.load, Some(t))
        }
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        warn!("no interrupt handler: {e}");
    }
    flag
}

fn cmd_serve(a: ServeArgs) -> Result<bool> {
    let backend = Arc::new(match &a.snapshot_path {
        Some(p) => MemoryBackend::with_snapshot(p).with_context(|| format!("loading {}", p.display()))?,
        None => MemoryBackend::new(),
    });
    let netprofile = match &a.netprofile {
        Some(p) => {
            let mut p = NetProfile::resolve(p)?;
            if let Some(n) = a.connections {
                p.connections = n;
            }
            Some(p)
        }
        None => None,
    };
    let config = ServerConfig { bind: a.bind, max_inflight: a.max_inflight, workers: a.workers, netprofile, ..ServerConfig::default() };
    let stop = interrupt_flag();
    let h = serve(config, backend.clone())?;
    println!("listening on {}", h.local_addr());
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    info!("shutting down");
    h.shutdown();
    backend.save()?;
    Ok(true)
}

fn write_ids(path: &Path, ids: &[SampleId]) -> Result<()> {
    netloader::splits::write_uuid_list(path, ids).with_context(|| format!("writing {}", path.display()))
}

fn cmd_ingest(a: IngestArgs) -> Result<bool> {
    let report = match (&a.dir, a.synthetic) {
        (Some(dir), _) => ingest_directory(&a.endpoint, &a.tables.table, &a.tables.meta_table, dir, a.parallelism, a.seed)?,
        (None, true) => {
            let d = SyntheticDataset::generate(a.synth.spec(a.seed))?;
            let r = ingest_synthetic(&a.endpoint, &a.tables.table, &a.tables.meta_table, &d, a.parallelism)?;
            if let Some(p) = &a.ids_out {
                write_ids(p, &d.ids)?;
            }
            r
        }
        (None, false) => bail!("give --dir or --synthetic"),
    };
    if let (Some(p), Some(_)) = (&a.ids_out, &a.dir) {
        let ids = AdminClient::connect(&a.endpoint)?.list_ids(&a.tables.table)?;
        write_ids(p, &ids)?;
    }
    print!("{}", report.to_text());
    Ok(true)
}

fn cmd_synth(a: SynthArgs) -> Result<bool> {
    let d = SyntheticDataset::generate(a.synth.spec(a.seed))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = csv::Writer::from_path(a.out.join(SIDECAR))?;
    w.write_record(["filename", "entity_id", "group_key", "x", "y", "class_label"])?;
    for i in 0..d.len() {
        let name = format!("sample-{i:06}.bin");
        fs::write(a.out.join(&name), d.data(i))?;
        let m = d.metadata(i);
        w.write_record([
            name,
            m.entity_id,
            m.group_key,
            m.coord_x.to_string(),
            m.coord_y.to_string(),
            m.class_label.to_string(),
        ])?;
    }
    w.flush()?;
    println!("count={}\nbytes={}", d.len(), d.total_bytes());
    Ok(true)
}

fn cmd_split(a: SplitArgs) -> Result<bool> {
    let spec = match &a.spec {
        Some(p) => parse_split_spec(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SplitSpec { ratios: a.ratios.clone(), seed: a.seed, ..SplitSpec::default() },
    };
    let (_, audit, paths) = make_splits_cmd(&a.endpoint, &a.meta_table, &spec, &a.out)?;
    print!("{}", audit.to_text());
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(audit.violations.is_empty())
}

fn prefetch_config(a: &LoadArgs) -> PrefetchConfig {
    PrefetchConfig {
        prefetch_buffers: a.buffers,
        out_of_order: a.ooo.on(),
        incremental_fill: a.incremental.on(),
        fill_stride: a.fill_stride,
        batch_size: a.batch_size,
        drop_last: a.drop_last,
        seed: a.seed,
    }
}

fn client_config(a: &LoadArgs, endpoint: String) -> ClientConfig {
    ClientConfig { io_workers: a.io_workers, connections_per_worker: a.connections_per_worker, ..ClientConfig::new(endpoint) }
}

/// Consumers, per-consumer rate and the utilization floor for `--check`.
type Trainsim = (usize, f64, f64);

fn cmd_load(a: LoadArgs, trainsim: Option<Trainsim>) -> Result<bool> {
    let mut profile = NetProfile::resolve(&a.profile)?;
    let connections = a.io_workers * a.connections_per_worker;
    profile.connections = connections;
    let opts = RunOptions { prefetch: prefetch_config(&a), epochs: a.epochs, stop: Some(interrupt_flag()), ..RunOptions::default() };
    let train = |opts: &RunOptions, (consumers, rate, _): Trainsim| TrainsimOptions { run: opts.clone(), consumers, per_consumer_rate: rate };

    let (metrics, ids) = if let Some(endpoint) = &a.endpoint {
        if !profile.is_identity() {
            warn!("--profile only shapes embedded and virtual runs; shape a remote store with `serve --netprofile`");
        }
        let ids = match &a.uuids {
            Some(p) => read_uuid_list(p)?,
            None => AdminClient::connect(endpoint)?.list_ids(&a.tables.table)?,
        };
        let client = client_config(&a, endpoint.clone());
        let m = match trainsim {
            Some(t) => run_trainsim(client, &a.tables.table, &ids, &train(&opts, t))?,
            None => run_tightloop(client, &a.tables.table, &ids, &opts)?,
        };
        (m, ids)
    } else {
        let d = SyntheticDataset::generate(a.synth.spec(a.seed))?;
        let ids = match &a.uuids {
            Some(p) => read_uuid_list(p)?,
            None => d.ids.clone(),
        };
        let backend = Arc::new(SyntheticBackend::new(d, &a.tables.table, &a.tables.meta_table, !a.full_data));
        let m = if a.virtual_time {
            match trainsim {
                Some(t) => run_trainsim_virtual(backend, &a.tables.table, &ids, &profile, connections, &train(&opts, t))?,
                None => run_tightloop_virtual(backend, &a.tables.table, &ids, &profile, connections, &opts)?,
            }
        } else {
            let netprofile = (!profile.is_identity()).then(|| profile.clone());
            let h = serve(ServerConfig { netprofile, ..ServerConfig::default() }, backend as Arc<dyn StoreBackend>)?;
            let client = client_config(&a, h.local_addr().to_string());
            let m = match trainsim {
                Some(t) => run_trainsim(client, &a.tables.table, &ids, &train(&opts, t)),
                None => run_tightloop(client, &a.tables.table, &ids, &opts),
            };
            h.shutdown();
            m?
        };
        (m, ids)
    };

    print!("{}", metrics.summary());
    if let Some(out) = &a.out {
        metrics.write_csv(out)?;
        println!("wrote {}", out.display());
    }
    if !a.check {
        return Ok(true);
    }
    let problems = check(&metrics, &a, ids.len(), trainsim.map(|t| t.2));
    for p in &problems {
        eprintln!("check failed: {p}");
    }
    Ok(problems.is_empty())
}

fn check(m: &RunMetrics, a: &LoadArgs, n: usize, min_utilization: Option<f64>) -> Vec<String> {
    let mut problems = Vec::new();
    if a.incremental.on() && !m.transient_ok {
        problems.push(format!("transient request ratio {:.3} over 1 + 1/{}", m.transient_request_ratio, a.fill_stride));
    }
    match min_utilization {
        Some(floor) => {
            if let Some(s) = &m.stall {
                if s.utilization < floor {
                    problems.push(format!("utilization {:.3} below {floor}", s.utilization));
                }
            }
        }
        None => {
            let want = if a.drop_last { n / a.batch_size * a.batch_size } else { n } as u64;
            let complete: Vec<_> = m.epochs.iter().filter(|e| !e.partial).collect();
            for e in &complete {
                if e.items != want {
                    problems.push(format!("epoch {} delivered {} items, planned {want}", e.epoch, e.items));
                }
            }
            if !a.drop_last && complete.windows(2).any(|w| w[0].checksum != w[1].checksum) {
                problems.push("epoch checksums differ".into());
            }
        }
    }
    problems
}

fn cmd_report(a: ReportArgs) -> Result<bool> {
    if a.dirs.is_empty() {
        bail!("give at least one result directory");
    }
    let mut rates = Vec::new();
    for dir in &a.dirs {
        let epochs = read_epoch_csv(&dir.join("metrics.csv"))?;
        let batches = read_batch_csv(&dir.join("batch_times.csv"))?;
        let rate = mean(&epochs.iter().map(|e| e.bytes_per_sec()).collect::<Vec<_>>());
        let mut seen = std::collections::HashMap::new();
        let asm: Vec<f64> = batches
            .iter()
            .filter(|b| {
                let k = seen.entry(b.consumer).or_insert(0usize);
                *k += 1;
                *k > a.skip
            })
            .map(|b| b.assembly.as_secs_f64())
            .collect();
        println!(
            "{}: epochs={} partial={} mean_MB_per_s={:.1} assembly_median_ms={:.2} assembly_max_ms={:.2}",
            dir.display(),
            epochs.len(),
            epochs.iter().any(|e| e.partial),
            rate / 1e6,
            median(&asm) * 1e3,
            asm.iter().cloned().fold(0.0, f64::max) * 1e3
        );
        rates.push(rate);
    }
    if rates.len() > 1 && rates[1] > 0.0 {
        println!("throughput ratio first/second={:.3}", rates[0] / rates[1]);
    }
    Ok(true)
}
