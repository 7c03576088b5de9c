use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bytes::Bytes;
use parking_lot::RwLock;

use super::StoreError;
use crate::model::{Label, LabelKind, MetadataRecord, SampleId, SampleRecord};
use crate::wire::{decode_metadata_payload, decode_sample_payload, encode_metadata_payload, encode_sample_payload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TableKind {
    Data(LabelKind),
    Metadata,
}

/// `keyspace.table` plus what the table holds.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TableSpec {
    pub keyspace: String,
    pub table: String,
    pub kind: TableKind,
}

impl TableSpec {
    pub fn new(keyspace: &str, table: &str, kind: TableKind) -> Self {
        Self { keyspace: keyspace.into(), table: table.into(), kind }
    }

    /// Parses `keyspace.table`.
    pub fn parse(name: &str, kind: TableKind) -> Result<Self, StoreError> {
        match name.split_once('.') {
            Some((ks, t)) if !ks.is_empty() && !t.is_empty() && !t.contains('.') => Ok(Self::new(ks, t, kind)),
            _ => Err(StoreError::InvalidInput(format!("table name {name:?} is not keyspace.table"))),
        }
    }

    pub fn qualified(&self) -> String {
        format!("{}.{}", self.keyspace, self.table)
    }
}

impl fmt::Display for TableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.keyspace, self.table)
    }
}

/// Storage seam behind the server. Tables are addressed by qualified name.
pub trait StoreBackend: Send + Sync + 'static {
    /// Creates the table, or succeeds if it already exists with the same kind.
    fn create_table(&self, spec: &TableSpec) -> Result<(), StoreError>;

    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError>;

    /// GET response payload for `id`. Backends that keep records encoded
    /// override this to skip the round trip through [`SampleRecord`].
    fn get_payload(&self, table: &str, id: &SampleId) -> Result<Bytes, StoreError> {
        let rec = self.get(table, id)?;
        Ok(encode_sample_payload(&rec.label, &rec.data))
    }

    /// Label and data of `id` without building a response payload.
    fn get_parts(&self, table: &str, id: &SampleId) -> Result<(Label, Bytes), StoreError> {
        let payload = self.get_payload(table, id)?;
        decode_sample_payload(&payload).map_err(|e| StoreError::Backend(e.to_string()))
    }

    fn put(&self, table: &str, rec: SampleRecord) -> Result<(), StoreError>;

    /// Inserts both rows in one critical section.
    fn put_atomic(
        &self,
        data_table: &str,
        meta_table: &str,
        rec: SampleRecord,
        meta: MetadataRecord,
    ) -> Result<(), StoreError>;

    /// All ids of the table, sorted.
    fn list_ids(&self, table: &str) -> Result<Vec<SampleId>, StoreError>;

    fn get_metadata(&self, table: &str, id: &SampleId) -> Result<MetadataRecord, StoreError>;
}

/// Checks `rec`/`meta` agreement before a co-insert.
pub fn check_pair(rec: &SampleRecord, meta: &MetadataRecord) -> Result<(), StoreError> {
    if rec.id != meta.id {
        return Err(StoreError::InvalidInput(format!("data id {} differs from metadata id {}", rec.id, meta.id)));
    }
    if !meta.matches(rec) {
        return Err(StoreError::InvalidInput(format!("class label of {} disagrees with its metadata", rec.id)));
    }
    Ok(())
}

/// Backend-generic atomic ingest of one sample.
pub fn put_sample_atomic(
    backend: &dyn StoreBackend,
    data_table: &str,
    meta_table: &str,
    rec: SampleRecord,
    meta: MetadataRecord,
) -> Result<(), StoreError> {
    check_pair(&rec, &meta)?;
    backend.put_atomic(data_table, meta_table, rec, meta)
}

enum Table {
    /// Rows are kept as encoded GET payloads.
    Data { label: LabelKind, rows: HashMap<SampleId, Bytes> },
    Metadata { rows: HashMap<SampleId, MetadataRecord> },
}

impl Table {
    fn empty(kind: TableKind) -> Self {
        match kind {
            TableKind::Data(label) => Table::Data { label, rows: HashMap::new() },
            TableKind::Metadata => Table::Metadata { rows: HashMap::new() },
        }
    }

    fn kind(&self) -> TableKind {
        match self {
            Table::Data { label, .. } => TableKind::Data(*label),
            Table::Metadata { .. } => TableKind::Metadata,
        }
    }

    fn len(&self) -> usize {
        match self {
            Table::Data { rows, .. } => rows.len(),
            Table::Metadata { rows } => rows.len(),
        }
    }
}

/// In-memory tables behind one lock, with optional snapshot file.
///
/// Writing tables are created on first insert; a data table takes the label
/// kind of its first record and rejects the other kind afterwards.
#[derive(Default)]
pub struct MemoryBackend {
    tables: RwLock<HashMap<String, Table>>,
    snapshot: Option<PathBuf>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; [`MemoryBackend::save`] writes back to it.
    pub fn with_snapshot(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut b = if path.exists() { Self::load_snapshot(&path)? } else { Self::new() };
        b.snapshot = Some(path);
        Ok(b)
    }

    pub fn table_len(&self, table: &str) -> Option<usize> {
        self.tables.read().get(table).map(Table::len)
    }

    pub fn total_data_bytes(&self) -> u64 {
        self.tables
            .read()
            .values()
            .map(|t| match t {
                Table::Data { rows, .. } => rows.values().map(|p| p.len() as u64).sum(),
                Table::Metadata { .. } => 0,
            })
            .sum()
    }

    /// Writes the snapshot file configured by [`MemoryBackend::with_snapshot`].
    pub fn save(&self) -> Result<(), StoreError> {
        match &self.snapshot {
            Some(p) => self.save_snapshot(p),
            None => Ok(()),
        }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let tables = self.tables.read();
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(tables.len() as u32).to_le_bytes())?;
        let mut names: Vec<_> = tables.keys().collect();
        names.sort();
        for name in names {
            let t = &tables[name];
            write_chunk(&mut w, name.as_bytes())?;
            let mut ids: Vec<_> = match t {
                Table::Data { rows, .. } => rows.keys().copied().collect(),
                Table::Metadata { rows } => rows.keys().copied().collect(),
            };
            ids.sort();
            match t {
                Table::Data { label, rows } => {
                    w.write_all(&[*label as u8])?;
                    w.write_all(&(ids.len() as u64).to_le_bytes())?;
                    for id in ids {
                        w.write_all(id.as_bytes())?;
                        write_chunk(&mut w, &rows[&id])?;
                    }
                }
                Table::Metadata { rows } => {
                    w.write_all(&[0])?;
                    w.write_all(&(ids.len() as u64).to_le_bytes())?;
                    for id in ids {
                        w.write_all(id.as_bytes())?;
                        write_chunk(&mut w, &encode_metadata_payload(&rows[&id]))?;
                    }
                }
            }
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, StoreError> {
        let bad = |what: &str| StoreError::Snapshot(format!("{}: {what}", path.display()));
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("not a snapshot file"));
        }
        let n_tables = read_u32(&mut r)?;
        let mut tables = HashMap::new();
        for _ in 0..n_tables {
            let name = String::from_utf8(read_chunk(&mut r)?).map_err(|_| bad("table name"))?;
            let mut kind = [0u8];
            r.read_exact(&mut kind)?;
            let mut n = [0u8; 8];
            r.read_exact(&mut n)?;
            let n = u64::from_le_bytes(n);
            let table = match kind[0] {
                0 => {
                    let mut rows = HashMap::new();
                    for _ in 0..n {
                        let id = read_id(&mut r)?;
                        let m = decode_metadata_payload(&read_chunk(&mut r)?.into()).map_err(|e| bad(&e.to_string()))?;
                        rows.insert(id, m);
                    }
                    Table::Metadata { rows }
                }
                k => {
                    let label = LabelKind::from_u8(k).ok_or_else(|| bad("table kind"))?;
                    let mut rows = HashMap::new();
                    for _ in 0..n {
                        let id = read_id(&mut r)?;
                        let payload = Bytes::from(read_chunk(&mut r)?);
                        decode_sample_payload(&payload).map_err(|e| bad(&e.to_string()))?;
                        rows.insert(id, payload);
                    }
                    Table::Data { label, rows }
                }
            };
            tables.insert(name, table);
        }
        Ok(Self { tables: RwLock::new(tables), snapshot: None })
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"OOLS";

fn write_chunk(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_chunk(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut v = vec![0u8; n];
    r.read_exact(&mut v)?;
    Ok(v)
}

fn read_id(r: &mut impl Read) -> std::io::Result<SampleId> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(SampleId::from_bytes(b))
}

fn data_rows<'a>(
    tables: &'a mut HashMap<String, Table>,
    name: &str,
    rec: &SampleRecord,
) -> Result<&'a mut HashMap<SampleId, Bytes>, StoreError> {
    let want = rec.label.kind();
    let t = tables
        .entry(name.to_owned())
        .or_insert_with(|| Table::empty(TableKind::Data(want)));
    match t {
        Table::Data { label, rows } if *label == want => Ok(rows),
        Table::Data { label, .. } => Err(StoreError::InvalidInput(format!(
            "table {name} holds {label:?} labels, record has {want:?}"
        ))),
        Table::Metadata { .. } => Err(StoreError::InvalidInput(format!("{name} is a metadata table"))),
    }
}

fn meta_rows<'a>(
    tables: &'a mut HashMap<String, Table>,
    name: &str,
) -> Result<&'a mut HashMap<SampleId, MetadataRecord>, StoreError> {
    match tables.entry(name.to_owned()).or_insert_with(|| Table::empty(TableKind::Metadata)) {
        Table::Metadata { rows } => Ok(rows),
        Table::Data { .. } => Err(StoreError::InvalidInput(format!("{name} is a data table"))),
    }
}

impl StoreBackend for MemoryBackend {
    fn create_table(&self, spec: &TableSpec) -> Result<(), StoreError> {
        let mut tables = self.tables.write();
        let name = spec.qualified();
        match tables.get(&name) {
            Some(t) if t.kind() == spec.kind => Ok(()),
            Some(t) => Err(StoreError::InvalidInput(format!("{name} exists as {:?}", t.kind()))),
            None => {
                tables.insert(name, Table::empty(spec.kind));
                Ok(())
            }
        }
    }

    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError> {
        let payload = self.get_payload(table, id)?;
        let (label, data) = decode_sample_payload(&payload).map_err(|e| StoreError::Backend(e.to_string()))?;
        SampleRecord::new(*id, label, data).map_err(|e| StoreError::Backend(e.to_string()))
    }

    fn get_payload(&self, table: &str, id: &SampleId) -> Result<Bytes, StoreError> {
        match self.tables.read().get(table) {
            Some(Table::Data { rows, .. }) => rows.get(id).cloned().ok_or(StoreError::NotFound(format!("{id} in {table}"))),
            Some(Table::Metadata { .. }) => Err(StoreError::InvalidInput(format!("{table} is a metadata table"))),
            None => Err(StoreError::NotFound(format!("table {table}"))),
        }
    }

    fn put(&self, table: &str, rec: SampleRecord) -> Result<(), StoreError> {
        let payload = encode_sample_payload(&rec.label, &rec.data);
        let mut tables = self.tables.write();
        let rows = data_rows(&mut tables, table, &rec)?;
        if rows.contains_key(&rec.id) {
            return Err(StoreError::DuplicateKey(rec.id.to_string()));
        }
        rows.insert(rec.id, payload);
        Ok(())
    }

    fn put_atomic(
        &self,
        data_table: &str,
        meta_table: &str,
        rec: SampleRecord,
        meta: MetadataRecord,
    ) -> Result<(), StoreError> {
        check_pair(&rec, &meta)?;
        if data_table == meta_table {
            return Err(StoreError::InvalidInput("data and metadata tables must differ".into()));
        }
        let payload = encode_sample_payload(&rec.label, &rec.data);
        let mut tables = self.tables.write();
        // Validate both sides before touching either.
        if data_rows(&mut tables, data_table, &rec)?.contains_key(&rec.id)
            || meta_rows(&mut tables, meta_table)?.contains_key(&meta.id)
        {
            return Err(StoreError::DuplicateKey(rec.id.to_string()));
        }
        data_rows(&mut tables, data_table, &rec)?.insert(rec.id, payload);
        meta_rows(&mut tables, meta_table)?.insert(meta.id, meta);
        Ok(())
    }

    fn list_ids(&self, table: &str) -> Result<Vec<SampleId>, StoreError> {
        let tables = self.tables.read();
        let mut ids: Vec<_> = match tables.get(table) {
            Some(Table::Data { rows, .. }) => rows.keys().copied().collect(),
            Some(Table::Metadata { rows }) => rows.keys().copied().collect(),
            None => return Err(StoreError::NotFound(format!("table {table}"))),
        };
        drop(tables);
        ids.sort_unstable();
        Ok(ids)
    }

    fn get_metadata(&self, table: &str, id: &SampleId) -> Result<MetadataRecord, StoreError> {
        match self.tables.read().get(table) {
            Some(Table::Metadata { rows }) => rows.get(id).cloned().ok_or(StoreError::NotFound(format!("{id} in {table}"))),
            Some(Table::Data { .. }) => Err(StoreError::InvalidInput(format!("{table} is a data table"))),
            None => Err(StoreError::NotFound(format!("table {table}"))),
        }
    }
}

impl FromStr for TableKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "int" | "intclass" => Ok(TableKind::Data(LabelKind::IntClass)),
            "blob" => Ok(TableKind::Data(LabelKind::Blob)),
            "meta" | "metadata" => Ok(TableKind::Metadata),
            _ => Err(StoreError::InvalidInput(format!("unknown table kind {s:?}"))),
        }
    }
}
