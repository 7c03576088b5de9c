//! Test backends wrapping [`MemoryBackend`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use netloader::model::{Label, MetadataRecord, SampleId, SampleRecord};
use netloader::store::{MemoryBackend, StoreBackend, StoreError, TableSpec};
use parking_lot::{Condvar, Mutex};

/// GETs block until the gate opens.
#[derive(Default)]
pub struct GateBackend {
    pub inner: MemoryBackend,
    open: Mutex<bool>,
    cv: Condvar,
    pub gets_started: AtomicU64,
}

impl GateBackend {
    pub fn open(&self) {
        *self.open.lock() = true;
        self.cv.notify_all();
    }
}

/// GETs sleep for `first id byte` milliseconds.
#[derive(Default)]
pub struct DelayBackend {
    pub inner: MemoryBackend,
}

/// Inserts data then metadata in two separate steps, for checking that the
/// auditor can see a torn co-insert.
#[derive(Default)]
pub struct TornBackend {
    pub inner: MemoryBackend,
}

macro_rules! forward {
    () => {
        fn create_table(&self, spec: &TableSpec) -> Result<(), StoreError> {
            self.inner.create_table(spec)
        }
        fn put(&self, table: &str, rec: SampleRecord) -> Result<(), StoreError> {
            self.inner.put(table, rec)
        }
        fn list_ids(&self, table: &str) -> Result<Vec<SampleId>, StoreError> {
            self.inner.list_ids(table)
        }
        fn get_metadata(&self, table: &str, id: &SampleId) -> Result<MetadataRecord, StoreError> {
            self.inner.get_metadata(table, id)
        }
    };
}

impl StoreBackend for GateBackend {
    forward!();
    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError> {
        self.gets_started.fetch_add(1, Ordering::SeqCst);
        let mut open = self.open.lock();
        while !*open {
            self.cv.wait(&mut open);
        }
        drop(open);
        self.inner.get(table, id)
    }
    fn put_atomic(&self, d: &str, m: &str, rec: SampleRecord, meta: MetadataRecord) -> Result<(), StoreError> {
        self.inner.put_atomic(d, m, rec, meta)
    }
}

impl StoreBackend for DelayBackend {
    forward!();
    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError> {
        std::thread::sleep(Duration::from_millis(u64::from(id.as_bytes()[0])));
        self.inner.get(table, id)
    }
    fn put_atomic(&self, d: &str, m: &str, rec: SampleRecord, meta: MetadataRecord) -> Result<(), StoreError> {
        self.inner.put_atomic(d, m, rec, meta)
    }
}

impl StoreBackend for TornBackend {
    forward!();
    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError> {
        self.inner.get(table, id)
    }
    fn put_atomic(&self, d: &str, m: &str, rec: SampleRecord, meta: MetadataRecord) -> Result<(), StoreError> {
        let scratch = SampleRecord::new(rec.id, rec.label.clone(), vec![0u8]).unwrap();
        self.inner.put(d, rec)?;
        std::thread::sleep(Duration::from_micros(200));
        // Metadata lands later, via a side table so the data row is not duplicated.
        self.inner.put_atomic("torn.scratch", m, scratch, meta)
    }
}

pub fn record(n: u64, class: i32) -> (SampleRecord, MetadataRecord) {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&n.to_le_bytes());
    b[8..].copy_from_slice(&(!n).to_le_bytes());
    let id = SampleId::from_bytes(b);
    let rec = SampleRecord::new(id, Label::IntClass(class), n.to_le_bytes().to_vec()).unwrap();
    let meta = MetadataRecord {
        id,
        entity_id: format!("e{}", n % 97),
        group_key: format!("g{}", n % 5),
        coord_x: n as i32,
        coord_y: -(n as i32),
        class_label: class,
    };
    (rec, meta)
}

pub struct AuditOutcome {
    pub inserted: usize,
    pub audits: usize,
    pub rows_checked: usize,
    pub violations: usize,
}

/// Inserts `n` samples from `writers` threads through `insert` while an
/// auditor repeatedly lists the data table and looks up every listed id's
/// metadata row.
pub fn audit_during_inserts(
    backend: Arc<dyn StoreBackend>,
    data_table: &str,
    meta_table: &str,
    n: u64,
    writers: u64,
    insert: impl Fn(u64, SampleRecord, MetadataRecord) + Send + Sync + 'static,
) -> AuditOutcome {
    let insert = Arc::new(insert);
    let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let auditor = {
        let (backend, done) = (backend.clone(), done.clone());
        let (dt, mt) = (data_table.to_owned(), meta_table.to_owned());
        std::thread::spawn(move || {
            let (mut audits, mut rows, mut violations) = (0, 0, 0);
            loop {
                let finished = done.load(Ordering::SeqCst);
                if let Ok(ids) = backend.list_ids(&dt) {
                    for id in &ids {
                        if backend.get_metadata(&mt, id).is_err() {
                            violations += 1;
                        }
                    }
                    rows += ids.len();
                }
                audits += 1;
                if finished {
                    return (audits, rows, violations);
                }
            }
        })
    };
    let handles: Vec<_> = (0..writers)
        .map(|w| {
            let insert = insert.clone();
            std::thread::spawn(move || {
                let mut i = w;
                while i < n {
                    let (rec, meta) = record(i, (i % 10) as i32);
                    insert(w, rec, meta);
                    i += writers;
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    done.store(true, Ordering::SeqCst);
    let (audits, rows_checked, violations) = auditor.join().unwrap();
    let inserted = backend.list_ids(data_table).map(|v| v.len()).unwrap_or(0);
    AuditOutcome { inserted, audits, rows_checked, violations }
}
