use std::collections::HashMap;
use std::sync::Arc;

use netloader::bench::{SyntheticBackend, SyntheticDataset, SyntheticDatasetSpec};
use netloader::loader::{LoaderError, PrefetchConfig, PrefetchLoader};
use netloader::model::{Batch, SampleId};
use netloader::netsim::{NetProfile, SimConfig, SimNetwork, SimSession};
use netloader::BatchFetcher;

pub const DATA: &str = "bench.data";
pub const META: &str = "bench.metadata";

pub fn synthetic(n: usize, mean_size: usize, seed: u64) -> (Arc<SyntheticBackend>, Vec<SampleId>) {
    let spec = SyntheticDatasetSpec { num_samples: n, mean_size, seed, num_classes: 10, num_entities: 50, ..Default::default() };
    let d = SyntheticDataset::generate(spec).unwrap();
    let ids = d.ids.clone();
    (Arc::new(SyntheticBackend::new(d, DATA, META, true)), ids)
}

pub fn sim_loader(
    backend: Arc<SyntheticBackend>,
    profile: NetProfile,
    connections: usize,
    config: PrefetchConfig,
) -> PrefetchLoader<SimSession> {
    let net = SimNetwork::new(SimConfig::new(profile, connections), backend);
    PrefetchLoader::new(net.session(DATA), config).unwrap()
}

/// Runs one epoch to the end and returns the batches and the planned ids.
pub fn run_epoch<F: BatchFetcher>(
    loader: &mut PrefetchLoader<F>,
    ids: &[SampleId],
    epoch: u64,
) -> Result<(Vec<Batch>, Vec<SampleId>), LoaderError> {
    loader.start_epoch(ids, epoch)?;
    let planned: Vec<SampleId> = loader.plan().unwrap().iter_ids().copied().collect();
    let mut out = Vec::new();
    while let Some(b) = loader.next_batch()? {
        out.push(b);
    }
    Ok((out, planned))
}

/// Count of ids whose delivered multiplicity differs from the planned one.
pub fn multiset_violations(batches: &[Batch], planned: &[SampleId]) -> usize {
    let mut count: HashMap<SampleId, i64> = HashMap::new();
    for id in planned {
        *count.entry(*id).or_default() += 1;
    }
    for b in batches {
        for it in b.items() {
            *count.entry(it.id).or_default() -= 1;
        }
    }
    count.values().filter(|&&c| c != 0).count()
}
