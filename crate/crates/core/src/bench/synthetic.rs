use std::collections::HashMap;
use std::sync::OnceLock;

use bytes::Bytes;
use rand_distr::{Distribution, LogNormal};

use crate::model::{IdGenerator, Label, LabelKind, MetadataRecord, Rng, SampleId, SampleRecord};
use crate::store::{StoreBackend, StoreError, TableKind, TableSpec};

/// Mean encoded image size of the reference dataset.
pub const DEFAULT_MEAN_SIZE: usize = 115_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub num_samples: usize,
    pub mean_size: usize,
    /// Shape of the lognormal size distribution.
    pub sigma: f64,
    pub num_classes: usize,
    pub num_entities: usize,
    /// Zipf-like class skew; 0 gives uniform classes.
    pub class_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_samples: 20_000,
            mean_size: DEFAULT_MEAN_SIZE,
            sigma: 0.5,
            num_classes: 1000,
            num_entities: 500,
            class_skew: 0.0,
            seed: 1,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.mean_size == 0 || self.num_classes == 0 || self.num_entities == 0 || !(self.sigma >= 0.0) {
            return Err(StoreError::InvalidInput("synthetic spec needs positive sizes, classes and entities".into()));
        }
        Ok(())
    }
}

/// Per-sample layout of a synthetic dataset: ids, sizes, classes and
/// entities, all derived from the seed. Payload bytes are produced on demand.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticDatasetSpec,
    pub ids: Vec<SampleId>,
    pub sizes: Vec<u32>,
    pub classes: Vec<i32>,
    pub entities: Vec<u32>,
}

impl SyntheticDataset {
    pub fn generate(spec: SyntheticDatasetSpec) -> Result<Self, StoreError> {
        spec.validate()?;
        let n = spec.num_samples;
        let mut idgen = IdGenerator::new(spec.seed);
        let ids = (0..n).map(|_| idgen.next_id()).collect();

        let sigma = spec.sigma;
        let mu = (spec.mean_size as f64).ln() - sigma * sigma / 2.0;
        let mut rng = Rng::new(spec.seed, 0x512e);
        let sizes = if sigma == 0.0 {
            vec![spec.mean_size as u32; n]
        } else {
            let d = LogNormal::new(mu, sigma).unwrap();
            (0..n).map(|_| d.sample(&mut rng).round().clamp(1.0, u32::MAX as f64) as u32).collect()
        };

        let weights: Vec<f64> = (0..spec.num_classes).map(|c| 1.0 / ((c + 1) as f64).powf(spec.class_skew)).collect();
        let total: f64 = weights.iter().sum();
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cdf.push(acc);
        }
        let mut rng = Rng::new(spec.seed, 0xc1a5);
        let classes = (0..n)
            .map(|_| {
                let u = rng.next_f64();
                cdf.partition_point(|&c| c <= u).min(spec.num_classes - 1) as i32
            })
            .collect();
        let mut rng = Rng::new(spec.seed, 0xe7e7);
        let entities = (0..n).map(|_| rng.below(spec.num_entities as u64) as u32).collect();
        Ok(Self { spec, ids, sizes, classes, entities })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.sizes.iter().map(|&s| u64::from(s)).sum()
    }

    /// Incompressible payload of sample `i`.
    pub fn data(&self, i: usize) -> Vec<u8> {
        let mut buf = vec![0u8; self.sizes[i] as usize];
        Rng::new(self.spec.seed ^ 0xda7a, i as u64).fill_bytes(&mut buf);
        buf
    }

    pub fn metadata(&self, i: usize) -> MetadataRecord {
        let e = self.entities[i];
        MetadataRecord {
            id: self.ids[i],
            entity_id: format!("entity-{e:05}"),
            group_key: format!("group-{}", e % 7),
            coord_x: (i % 1000) as i32,
            coord_y: (i / 1000) as i32,
            class_label: self.classes[i],
        }
    }

    pub fn record(&self, i: usize) -> SampleRecord {
        SampleRecord::new(self.ids[i], Label::IntClass(self.classes[i]), self.data(i)).expect("non-empty payload")
    }
}

fn zeros() -> &'static Bytes {
    static Z: OnceLock<Bytes> = OnceLock::new();
    Z.get_or_init(|| Bytes::from(vec![0u8; 64 << 20]))
}

/// Read-only backend serving a [`SyntheticDataset`] without storing payloads.
///
/// Hollow mode returns zero bytes of the right length and is meant for
/// virtual-time runs where only sizes matter.
pub struct SyntheticBackend {
    data: SyntheticDataset,
    index: HashMap<SampleId, usize>,
    data_table: String,
    meta_table: String,
    hollow: bool,
}

impl SyntheticBackend {
    pub fn new(data: SyntheticDataset, data_table: &str, meta_table: &str, hollow: bool) -> Self {
        let index = data.ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Self { data, index, data_table: data_table.into(), meta_table: meta_table.into(), hollow }
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.data
    }

    fn locate(&self, table: &str, want: &str, id: &SampleId) -> Result<usize, StoreError> {
        if table != want {
            return Err(StoreError::NotFound(format!("table {table}")));
        }
        self.index.get(id).copied().ok_or_else(|| StoreError::NotFound(format!("{id} in {table}")))
    }
}

impl StoreBackend for SyntheticBackend {
    fn create_table(&self, spec: &TableSpec) -> Result<(), StoreError> {
        let name = spec.qualified();
        let ok = (name == self.data_table && spec.kind == TableKind::Data(LabelKind::IntClass))
            || (name == self.meta_table && spec.kind == TableKind::Metadata);
        if ok {
            Ok(())
        } else {
            Err(StoreError::InvalidInput("synthetic backend is read-only".into()))
        }
    }

    fn get(&self, table: &str, id: &SampleId) -> Result<SampleRecord, StoreError> {
        let (label, data) = self.get_parts(table, id)?;
        SampleRecord::new(*id, label, data).map_err(|e| StoreError::Backend(e.to_string()))
    }

    fn get_parts(&self, table: &str, id: &SampleId) -> Result<(Label, Bytes), StoreError> {
        let i = self.locate(table, &self.data_table, id)?;
        let label = Label::IntClass(self.data.classes[i]);
        let size = self.data.sizes[i] as usize;
        let data = if self.hollow && size <= zeros().len() {
            zeros().slice(..size)
        } else {
            Bytes::from(self.data.data(i))
        };
        Ok((label, data))
    }

    fn get_payload(&self, table: &str, id: &SampleId) -> Result<Bytes, StoreError> {
        let (label, data) = self.get_parts(table, id)?;
        Ok(crate::wire::encode_sample_payload(&label, &data))
    }

    fn put(&self, _: &str, _: SampleRecord) -> Result<(), StoreError> {
        Err(StoreError::InvalidInput("synthetic backend is read-only".into()))
    }

    fn put_atomic(&self, _: &str, _: &str, _: SampleRecord, _: MetadataRecord) -> Result<(), StoreError> {
        Err(StoreError::InvalidInput("synthetic backend is read-only".into()))
    }

    fn list_ids(&self, table: &str) -> Result<Vec<SampleId>, StoreError> {
        if table != self.data_table && table != self.meta_table {
            return Err(StoreError::NotFound(format!("table {table}")));
        }
        let mut ids = self.data.ids.clone();
        ids.sort_unstable();
        Ok(ids)
    }

    fn get_metadata(&self, table: &str, id: &SampleId) -> Result<MetadataRecord, StoreError> {
        let i = self.locate(table, &self.meta_table, id)?;
        Ok(self.data.metadata(i))
    }
}
