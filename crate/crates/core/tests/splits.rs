use std::collections::{BTreeMap, BTreeSet, HashMap};

use netloader::bench::{SyntheticDataset, SyntheticDatasetSpec};
use netloader::model::{MetadataRecord, Rng, SampleId};
use netloader::splits::{
    audit_split, create_splits, read_uuid_list, split_file_name, write_split_files, SplitResult, SplitSpec,
};
use proptest::prelude::*;

fn rec(i: u64, entity: u64, class: i32) -> MetadataRecord {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&i.to_be_bytes());
    b[8] = 0x5a;
    MetadataRecord {
        id: SampleId::from_bytes(b),
        entity_id: format!("p{entity:04}"),
        group_key: String::new(),
        coord_x: 0,
        coord_y: 0,
        class_label: class,
    }
}

fn skewed() -> Vec<MetadataRecord> {
    let spec = SyntheticDatasetSpec { num_samples: 10_000, num_entities: 500, num_classes: 10, class_skew: 1.0, seed: 8, mean_size: 1, ..Default::default() };
    let d = SyntheticDataset::generate(spec).unwrap();
    (0..d.len()).map(|i| d.metadata(i)).collect()
}

fn class_fractions(meta: &[MetadataRecord]) -> BTreeMap<i32, f64> {
    let mut t = BTreeMap::new();
    for m in meta {
        *t.entry(m.class_label).or_insert(0.0) += 1.0 / meta.len() as f64;
    }
    t
}

/// Sum of |fraction - ratio| over splits plus the summed absolute class
/// deviation from `target` over splits.
fn badness(splits: &[Vec<SampleId>], meta: &[MetadataRecord], ratios: &[f64], target: &BTreeMap<i32, f64>) -> f64 {
    let class: HashMap<SampleId, i32> = meta.iter().map(|m| (m.id, m.class_label)).collect();
    let mut total = 0.0;
    for (s, r) in splits.iter().zip(ratios) {
        total += (s.len() as f64 / meta.len() as f64 - r).abs();
        let mut h: BTreeMap<i32, f64> = BTreeMap::new();
        for id in s {
            *h.entry(class[id]).or_default() += 1.0;
        }
        for (c, t) in target {
            let got = if s.is_empty() { 0.0 } else { h.get(c).copied().unwrap_or(0.0) / s.len() as f64 };
            total += (got - t).abs();
        }
    }
    total
}

/// Each entity goes to a split drawn with probability equal to its ratio.
fn random_assignment(meta: &[MetadataRecord], ratios: &[f64], seed: u64) -> Vec<Vec<SampleId>> {
    let mut rng = Rng::new(seed, 99);
    let mut choice: HashMap<&str, usize> = HashMap::new();
    let mut out = vec![Vec::new(); ratios.len()];
    for m in meta {
        let k = *choice.entry(m.entity_id.as_str()).or_insert_with(|| {
            let u = rng.next_f64();
            let mut acc = 0.0;
            ratios.iter().position(|r| {
                acc += r;
                u < acc
            })
            .unwrap_or(ratios.len() - 1)
        });
        out[k].push(m.id);
    }
    out
}

#[test]
fn greedy_beats_random_assignment() {
    let meta = skewed();
    let target = class_fractions(&meta);
    let spec = SplitSpec { target_class_proportions: Some(target.clone()), seed: 3, ..Default::default() };
    let r = create_splits(&meta, &spec).unwrap();
    assert!(audit_split(&r, &meta, &spec).violations.is_empty());
    let greedy = badness(&r.splits, &meta, &spec.ratios, &target);
    for seed in 0..20 {
        let random = badness(&random_assignment(&meta, &spec.ratios, seed), &meta, &spec.ratios, &target);
        assert!(greedy <= random, "greedy {greedy:.4} vs random seed {seed} {random:.4}");
    }
}

#[test]
fn histograms_match_a_naive_count() {
    let meta = skewed();
    let spec = SplitSpec::default();
    let r = create_splits(&meta, &spec).unwrap();
    for (i, s) in r.splits.iter().enumerate() {
        let mut naive = BTreeMap::new();
        for id in s {
            let m = meta.iter().find(|m| m.id == *id).unwrap();
            *naive.entry(m.class_label).or_insert(0usize) += 1;
        }
        assert_eq!(r.class_histograms[i], naive);
    }
}

#[test]
fn audit_flags_a_shared_entity() {
    let meta: Vec<MetadataRecord> = (0..6).map(|i| rec(i, i / 2, 0)).collect();
    let spec = SplitSpec::with_ratios(&[0.5, 0.5]);
    let splits = vec![vec![meta[0].id, meta[2].id, meta[3].id], vec![meta[1].id, meta[4].id, meta[5].id]];
    let hist = |n| BTreeMap::from([(0, n)]);
    let r = SplitResult {
        splits,
        class_histograms: vec![hist(3), hist(3)],
        entity_sets: vec![BTreeSet::new(), BTreeSet::new()],
        dropped: Vec::new(),
        warnings: Vec::new(),
    };
    let audit = audit_split(&r, &meta, &spec);
    assert_eq!(audit.violations.len(), 1, "{:?}", audit.violations);
    assert!(audit.violations[0].contains("p0000"));
}

#[test]
fn same_seed_same_result_other_seed_still_valid() {
    let meta = skewed();
    let spec = SplitSpec { seed: 17, ..Default::default() };
    assert_eq!(create_splits(&meta, &spec).unwrap(), create_splits(&meta, &spec).unwrap());
    let other = SplitSpec { seed: 18, ..spec.clone() };
    let r = create_splits(&meta, &other).unwrap();
    assert!(audit_split(&r, &meta, &other).violations.is_empty());
}

#[test]
fn files_round_trip() {
    let meta = skewed();
    let spec = SplitSpec::default();
    let r = create_splits(&meta, &spec).unwrap();
    let audit = audit_split(&r, &meta, &spec);
    let dir = tempfile::tempdir().unwrap();
    let paths = write_split_files(dir.path(), &r, &audit).unwrap();
    for (i, s) in r.splits.iter().enumerate() {
        let p = dir.path().join(split_file_name(i, 3));
        assert!(paths.contains(&p));
        assert_eq!(&read_uuid_list(&p).unwrap(), s);
    }
    let report = std::fs::read_to_string(dir.path().join("splits.report")).unwrap();
    assert!(report.contains("violations=0"), "{report}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entities_never_leak(
        groups in prop::collection::vec((1usize..40, 0i32..4), 1..60),
        raw in prop::collection::vec(1u32..10, 2..5),
        seed in any::<u64>(),
        targeted in any::<bool>(),
    ) {
        let mut meta = Vec::new();
        for (e, &(size, class)) in groups.iter().enumerate() {
            for k in 0..size {
                let i = meta.len() as u64;
                meta.push(rec(i, e as u64, (class + k as i32 % 2) % 4));
            }
        }
        let sum: u32 = raw.iter().sum();
        let mut ratios: Vec<f64> = raw.iter().map(|&r| r as f64 / sum as f64).collect();
        let fix = 1.0 - ratios.iter().sum::<f64>();
        ratios[0] += fix;
        let target = if targeted { Some(class_fractions(&meta)) } else { None };
        let spec = SplitSpec { ratios, target_class_proportions: target, seed, ..Default::default() };
        let r = create_splits(&meta, &spec).unwrap();
        let audit = audit_split(&r, &meta, &spec);
        prop_assert!(audit.violations.is_empty(), "{:?}", audit.violations);
        prop_assert_eq!(r.total() + r.dropped.len(), meta.len());
        for i in 0..r.entity_sets.len() {
            for j in i + 1..r.entity_sets.len() {
                prop_assert!(r.entity_sets[i].is_disjoint(&r.entity_sets[j]));
            }
        }
    }
}
