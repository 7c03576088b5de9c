use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use crate::model::{Label, MetadataRecord, Rng, SampleId, SampleRecord};
use crate::splits::{audit_split, create_splits, write_split_files, SplitAudit, SplitResult, SplitSpec};
use crate::store::{AdminClient, StoreError};

use super::synthetic::SyntheticDataset;
use super::BenchError;

/// Name of the metadata sidecar inside an ingest directory.
pub const SIDECAR: &str = "metadata.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub count: usize,
    pub bytes: u64,
    pub duration: Duration,
}

impl IngestReport {
    pub fn to_text(&self) -> String {
        format!("count={}\nbytes={}\nduration_s={:.3}\n", self.count, self.bytes, self.duration.as_secs_f64())
    }
}

/// Id of a file in a directory ingest: a v4 UUID drawn from the seed and
/// the file name, so ingesting the same directory twice collides.
pub fn file_id(seed: u64, name: &str) -> SampleId {
    let stream = u64::from(crc32fast::hash(name.as_bytes())) << 32 | name.len() as u64;
    SampleId::generate(&mut Rng::new(seed, stream))
}

struct Item {
    name: String,
    record: SampleRecord,
    meta: MetadataRecord,
}

fn insert_parallel<I>(endpoint: &str, data_table: &str, meta_table: &str, parallelism: usize, count: usize, make: I) -> Result<IngestReport, BenchError>
where
    I: Fn(usize) -> Result<Item, BenchError> + Sync,
{
    let start = Instant::now();
    let workers = parallelism.clamp(1, count.max(1));
    let results: Vec<Result<u64, BenchError>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let make = &make;
                s.spawn(move || -> Result<u64, BenchError> {
                    let mut admin = AdminClient::connect(endpoint)?;
                    let mut bytes = 0;
                    for i in (w..count).step_by(workers) {
                        let it = make(i)?;
                        bytes += it.record.data.len() as u64;
                        admin.put_atomic(data_table, meta_table, it.record, it.meta).map_err(|e| match e {
                            StoreError::DuplicateKey(m) => BenchError::Store(StoreError::DuplicateKey(format!("{}: {m}", it.name))),
                            e => e.into(),
                        })?;
                    }
                    Ok(bytes)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ingest worker panicked")).collect()
    });
    let mut bytes = 0;
    for r in results {
        bytes += r?;
    }
    Ok(IngestReport { count, bytes, duration: start.elapsed() })
}

/// Inserts a generated dataset.
pub fn ingest_synthetic(
    endpoint: &str,
    data_table: &str,
    meta_table: &str,
    data: &SyntheticDataset,
    parallelism: usize,
) -> Result<IngestReport, BenchError> {
    insert_parallel(endpoint, data_table, meta_table, parallelism, data.len(), |i| {
        Ok(Item { name: format!("synthetic #{i}"), record: data.record(i), meta: data.metadata(i) })
    })
}

struct SidecarRow {
    entity_id: String,
    group_key: String,
    x: i32,
    y: i32,
    class_label: i32,
}

fn read_sidecar(path: &Path) -> Result<HashMap<String, SidecarRow>, BenchError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = HashMap::new();
    for (n, rec) in r.records().enumerate() {
        let line = n + 2;
        let bad = |what: &str| BenchError::InvalidInput(format!("{} line {line}: {what}", path.display()));
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        if rec.len() != 6 {
            return Err(bad("expected filename,entity_id,group_key,x,y,class_label"));
        }
        let int = |i: usize| rec[i].parse::<i32>().map_err(|_| bad(&format!("bad integer {:?}", &rec[i])));
        let row = SidecarRow { entity_id: rec[1].into(), group_key: rec[2].into(), x: int(3)?, y: int(4)?, class_label: int(5)? };
        if rows.insert(rec[0].to_string(), row).is_some() {
            return Err(BenchError::Store(StoreError::DuplicateKey(format!("{} listed twice in {}", &rec[0], path.display()))));
        }
    }
    Ok(rows)
}

/// Inserts every regular file of `dir` (except the sidecar) with the
/// metadata from `dir/metadata.csv`.
pub fn ingest_directory(
    endpoint: &str,
    data_table: &str,
    meta_table: &str,
    dir: &Path,
    parallelism: usize,
    seed: u64,
) -> Result<IngestReport, BenchError> {
    let io = |p: &Path, e: std::io::Error| BenchError::Io(format!("{}: {e}", p.display()));
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let entry = entry.map_err(|e| io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == SIDECAR || !entry.file_type().map_err(|e| io(dir, e))?.is_file() {
            continue;
        }
        files.push((name, entry.path()));
    }
    files.sort();
    if files.is_empty() {
        return Ok(IngestReport { count: 0, bytes: 0, duration: Duration::ZERO });
    }
    let sidecar = read_sidecar(&dir.join(SIDECAR))?;
    for (name, _) in &files {
        if !sidecar.contains_key(name) {
            return Err(BenchError::InvalidInput(format!("{name} has no row in {SIDECAR}")));
        }
    }
    for name in sidecar.keys() {
        if !files.iter().any(|(n, _)| n == name) {
            return Err(BenchError::InvalidInput(format!("{SIDECAR} lists missing file {name}")));
        }
    }
    insert_parallel(endpoint, data_table, meta_table, parallelism, files.len(), |i| {
        let (name, path) = &files[i];
        let data = fs::read(path).map_err(|e| io(path, e))?;
        let row = &sidecar[name];
        let id = file_id(seed, name);
        let record = SampleRecord::new(id, Label::IntClass(row.class_label), data)
            .map_err(|e| BenchError::InvalidInput(format!("{name}: {e}")))?;
        let meta = MetadataRecord {
            id,
            entity_id: row.entity_id.clone(),
            group_key: row.group_key.clone(),
            coord_x: row.x,
            coord_y: row.y,
            class_label: row.class_label,
        };
        Ok(Item { name: name.clone(), record, meta })
    })
}

/// Pulls every metadata row of `meta_table`.
pub fn fetch_metadata(endpoint: &str, meta_table: &str) -> Result<Vec<MetadataRecord>, BenchError> {
    let mut admin = AdminClient::connect(endpoint)?;
    let ids = admin.list_ids(meta_table)?;
    ids.into_iter().map(|id| admin.get_metadata(meta_table, id).map_err(BenchError::from)).collect()
}

/// Builds splits from the store's metadata and writes the lists and the
/// audit report to `out`.
pub fn make_splits_cmd(
    endpoint: &str,
    meta_table: &str,
    spec: &SplitSpec,
    out: &Path,
) -> Result<(SplitResult, SplitAudit, Vec<PathBuf>), BenchError> {
    spec.validate()?;
    let meta = fetch_metadata(endpoint, meta_table)?;
    let result = create_splits(&meta, spec)?;
    let audit = audit_split(&result, &meta, spec);
    let paths = write_split_files(out, &result, &audit)?;
    Ok((result, audit, paths))
}
