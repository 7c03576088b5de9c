//! Entity-disjoint train/validation/test splits built from metadata.

mod io;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::model::{MetadataRecord, Rng, SampleId};

pub use io::{parse_split_spec, read_uuid_list, split_file_name, write_split_files, write_uuid_list};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("split i/o: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub ratios: Vec<f64>,
    pub entity_field: String,
    pub class_field: String,
    /// Class label to target fraction.
    pub target_class_proportions: Option<BTreeMap<i32, f64>>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: vec![0.8, 0.1, 0.1],
            entity_field: "entity_id".into(),
            class_field: "class_label".into(),
            target_class_proportions: None,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_ratios(ratios: &[f64]) -> Self {
        Self { ratios: ratios.to_vec(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(SplitError::InvalidSpec("ratios must be positive".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidSpec(format!("ratios sum to {sum}, expected 1")));
        }
        if !MetadataRecord::has_field(&self.entity_field) {
            return Err(SplitError::InvalidSpec(format!("unknown entity field {:?}", self.entity_field)));
        }
        if !MetadataRecord::INT_FIELDS.contains(&self.class_field.as_str()) {
            return Err(SplitError::InvalidSpec(format!("unknown class field {:?}", self.class_field)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(SplitError::InvalidSpec("tolerance must be non-negative".into()));
        }
        if let Some(t) = &self.target_class_proportions {
            check_target(t)?;
        }
        Ok(())
    }

    fn entity_of(&self, m: &MetadataRecord) -> String {
        m.text_field(&self.entity_field).unwrap_or_default()
    }

    fn class_of(&self, m: &MetadataRecord) -> i32 {
        m.int_field(&self.class_field).unwrap_or_default()
    }
}

fn check_target(t: &BTreeMap<i32, f64>) -> Result<(), SplitError> {
    if t.values().any(|&f| !(f >= 0.0)) {
        return Err(SplitError::InvalidSpec("class fractions must be non-negative".into()));
    }
    let sum: f64 = t.values().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SplitError::InvalidSpec(format!("class fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitWarning {
    /// An entity too large for the smallest split.
    SplitInfeasible { entity: String, size: usize, capacity: f64 },
    RatioOutOfTolerance { split: usize, achieved: f64, target: f64 },
    ClassOutOfTolerance { split: usize, class: i32, achieved: f64, target: f64 },
}

impl fmt::Display for SplitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitWarning::SplitInfeasible { entity, size, capacity } => {
                write!(f, "SplitInfeasible entity={entity} size={size} capacity={capacity:.1}")
            }
            SplitWarning::RatioOutOfTolerance { split, achieved, target } => {
                write!(f, "RatioOutOfTolerance split={split} achieved={achieved:.4} target={target:.4}")
            }
            SplitWarning::ClassOutOfTolerance { split, class, achieved, target } => {
                write!(f, "ClassOutOfTolerance split={split} class={class} achieved={achieved:.4} target={target:.4}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub splits: Vec<Vec<SampleId>>,
    pub class_histograms: Vec<BTreeMap<i32, usize>>,
    pub entity_sets: Vec<BTreeSet<String>>,
    pub dropped: Vec<SampleId>,
    pub warnings: Vec<SplitWarning>,
}

impl SplitResult {
    pub fn total(&self) -> usize {
        self.splits.iter().map(Vec::len).sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = (self.total() + self.dropped.len()).max(1) as f64;
        self.splits.iter().map(|s| s.len() as f64 / n).collect()
    }

    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

struct Group {
    entity: String,
    members: Vec<usize>,
    classes: BTreeMap<i32, usize>,
}

/// Greedy largest-first assignment of entity groups to the split with the
/// largest remaining record deficit.
pub fn create_splits(metadata: &[MetadataRecord], spec: &SplitSpec) -> Result<SplitResult, SplitError> {
    spec.validate()?;
    if metadata.is_empty() {
        return Err(SplitError::InvalidSpec("no metadata records".into()));
    }
    let k = spec.ratios.len();
    let n = metadata.len() as f64;

    let mut by_entity: BTreeMap<String, Group> = BTreeMap::new();
    for (i, m) in metadata.iter().enumerate() {
        let e = spec.entity_of(m);
        let g = by_entity.entry(e.clone()).or_insert_with(|| Group { entity: e, members: Vec::new(), classes: BTreeMap::new() });
        g.members.push(i);
        *g.classes.entry(spec.class_of(m)).or_default() += 1;
    }
    // Lexicographic order from the map, then a seeded shuffle inside each
    // run of equal size.
    let mut groups: Vec<Group> = by_entity.into_values().collect();
    groups.sort_by(|a, b| b.members.len().cmp(&a.members.len()));
    let mut rng = Rng::new(spec.seed, 0x5b11);
    let mut start = 0;
    while start < groups.len() {
        let size = groups[start].members.len();
        let end = start + groups[start..].iter().take_while(|g| g.members.len() == size).count();
        rng.shuffle(&mut groups[start..end]);
        start = end;
    }

    let targets: Vec<f64> = spec.ratios.iter().map(|r| r * n).collect();
    let capacity = targets.iter().cloned().fold(f64::INFINITY, f64::min);
    let class_targets: Option<Vec<BTreeMap<i32, f64>>> = spec.target_class_proportions.as_ref().map(|t| {
        targets.iter().map(|&size| t.iter().map(|(&c, &f)| (c, f * size)).collect()).collect()
    });

    let mut assigned = vec![0usize; k];
    let mut assigned_class: Vec<BTreeMap<i32, usize>> = vec![BTreeMap::new(); k];
    let mut split_of = vec![0usize; metadata.len()];
    let mut warnings = Vec::new();

    for g in &groups {
        let size = g.members.len();
        let deficit = |i: usize| targets[i] - assigned[i] as f64;
        let largest = (0..k).fold(0, |best, i| if deficit(i) > deficit(best) { i } else { best });
        if size as f64 > capacity {
            warnings.push(SplitWarning::SplitInfeasible { entity: g.entity.clone(), size, capacity });
        }
        let chosen = match &class_targets {
            Some(ct) => {
                let fits: Vec<usize> = (0..k).filter(|&i| deficit(i) >= size as f64).collect();
                if fits.is_empty() {
                    largest
                } else {
                    let score = |i: usize| -> f64 {
                        g.classes
                            .iter()
                            .map(|(c, &cnt)| {
                                let want = ct[i].get(c).copied().unwrap_or(0.0);
                                let have = assigned_class[i].get(c).copied().unwrap_or(0) as f64;
                                cnt as f64 * (want - have) / targets[i]
                            })
                            .sum()
                    };
                    let mut best = fits[0];
                    for &i in &fits[1..] {
                        let (si, sb) = (score(i), score(best));
                        if si > sb || (si == sb && deficit(i) > deficit(best)) {
                            best = i;
                        }
                    }
                    best
                }
            }
            None => largest,
        };
        assigned[chosen] += size;
        for (c, cnt) in &g.classes {
            *assigned_class[chosen].entry(*c).or_default() += cnt;
        }
        for &m in &g.members {
            split_of[m] = chosen;
        }
    }

    let mut splits = vec![Vec::new(); k];
    for (i, m) in metadata.iter().enumerate() {
        splits[split_of[i]].push(m.id);
    }
    let mut result = summarize(splits, Vec::new(), metadata, spec);
    result.warnings = warnings;
    result.warnings.extend(tolerance_warnings(&result, spec));
    Ok(result)
}

fn summarize(splits: Vec<Vec<SampleId>>, dropped: Vec<SampleId>, metadata: &[MetadataRecord], spec: &SplitSpec) -> SplitResult {
    let index: HashMap<SampleId, &MetadataRecord> = metadata.iter().map(|m| (m.id, m)).collect();
    let mut class_histograms = Vec::with_capacity(splits.len());
    let mut entity_sets = Vec::with_capacity(splits.len());
    for s in &splits {
        let mut h = BTreeMap::new();
        let mut e = BTreeSet::new();
        for id in s {
            if let Some(m) = index.get(id) {
                *h.entry(spec.class_of(m)).or_default() += 1;
                e.insert(spec.entity_of(m));
            }
        }
        class_histograms.push(h);
        entity_sets.push(e);
    }
    SplitResult { splits, class_histograms, entity_sets, dropped, warnings: Vec::new() }
}

/// Ratio deviation is relative to the requested ratio; class deviation is
/// absolute in proportion units.
pub fn ratio_within(achieved: f64, target: f64, tolerance: f64) -> bool {
    (achieved - target).abs() <= tolerance * target + 1e-12
}

fn tolerance_warnings(r: &SplitResult, spec: &SplitSpec) -> Vec<SplitWarning> {
    let mut out = Vec::new();
    for (i, (&a, &t)) in r.fractions().iter().zip(&spec.ratios).enumerate() {
        if !ratio_within(a, t, spec.tolerance) {
            out.push(SplitWarning::RatioOutOfTolerance { split: i, achieved: a, target: t });
        }
    }
    if let Some(target) = &spec.target_class_proportions {
        for (i, h) in r.class_histograms.iter().enumerate() {
            out.extend(class_warnings(i, h, target, spec.tolerance));
        }
    }
    out
}

fn class_warnings(split: usize, h: &BTreeMap<i32, usize>, target: &BTreeMap<i32, f64>, tol: f64) -> Vec<SplitWarning> {
    let total: usize = h.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let classes: BTreeSet<i32> = h.keys().chain(target.keys()).copied().collect();
    classes
        .into_iter()
        .filter_map(|c| {
            let achieved = h.get(&c).copied().unwrap_or(0) as f64 / total as f64;
            let t = target.get(&c).copied().unwrap_or(0.0);
            ((achieved - t).abs() > tol + 1e-12).then_some(SplitWarning::ClassOutOfTolerance { split, class: c, achieved, target: t })
        })
        .collect()
}

/// Drops samples of over-represented classes so the kept set matches
/// `target`. Classes absent from `target` are dropped entirely.
pub fn class_rebalance(
    split: &[SampleId],
    metadata: &[MetadataRecord],
    target: &BTreeMap<i32, f64>,
    class_field: &str,
    seed: u64,
) -> Result<(Vec<SampleId>, Vec<SampleId>), SplitError> {
    check_target(target)?;
    if !MetadataRecord::INT_FIELDS.contains(&class_field) {
        return Err(SplitError::InvalidSpec(format!("unknown class field {class_field:?}")));
    }
    let index: HashMap<SampleId, &MetadataRecord> = metadata.iter().map(|m| (m.id, m)).collect();
    let mut by_class: BTreeMap<i32, Vec<SampleId>> = BTreeMap::new();
    for id in split {
        let m = index.get(id).ok_or_else(|| SplitError::InvalidSpec(format!("no metadata for {id}")))?;
        by_class.entry(m.int_field(class_field).unwrap_or_default()).or_default().push(*id);
    }
    for (&c, &f) in target {
        if f > 0.0 && !by_class.contains_key(&c) {
            return Err(SplitError::InvalidSpec(format!("target class {c} has no samples")));
        }
    }
    // Largest kept total whose per-class counts fit what is available.
    let scale = target
        .iter()
        .filter(|(_, &f)| f > 0.0)
        .map(|(c, &f)| by_class[c].len() as f64 / f)
        .fold(f64::INFINITY, f64::min);

    let mut keep: HashSet<SampleId> = HashSet::new();
    for (&c, ids) in &by_class {
        let f = target.get(&c).copied().unwrap_or(0.0);
        let quota = ((f * scale + 1e-9).floor() as usize).min(ids.len());
        let mut pool = ids.clone();
        pool.sort_unstable();
        Rng::new(seed, c as u32 as u64).shuffle(&mut pool);
        keep.extend(pool.into_iter().take(quota));
    }
    let (kept, dropped) = split.iter().partition(|id| keep.contains(id));
    Ok((kept, dropped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAudit {
    pub violations: Vec<String>,
    pub sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub ratio_deviation: Vec<f64>,
    pub entity_counts: Vec<usize>,
    pub class_histograms: Vec<BTreeMap<i32, usize>>,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl SplitAudit {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        s.push_str(&format!("violations={}\n", self.violations.len()));
        s.push_str(&format!("splits={}\n", self.sizes.len()));
        s.push_str(&format!("dropped={}\n", self.dropped));
        s.push_str(&format!("fractions={}\n", join(&self.fractions)));
        s.push_str(&format!("ratio_deviation={}\n", join(&self.ratio_deviation)));
        for (i, size) in self.sizes.iter().enumerate() {
            s.push_str(&format!("split.{i}.size={size}\n"));
            s.push_str(&format!("split.{i}.entities={}\n", self.entity_counts[i]));
            let h: Vec<String> = self.class_histograms[i].iter().map(|(c, n)| format!("{c}:{n}")).collect();
            s.push_str(&format!("split.{i}.classes={}\n", h.join(",")));
        }
        for (i, v) in self.violations.iter().enumerate() {
            s.push_str(&format!("violation.{i}={v}\n"));
        }
        for (i, w) in self.warnings.iter().enumerate() {
            s.push_str(&format!("warning.{i}={w}\n"));
        }
        s
    }
}

/// Recomputes every invariant of `result` from the raw metadata.
pub fn audit_split(result: &SplitResult, metadata: &[MetadataRecord], spec: &SplitSpec) -> SplitAudit {
    let index: HashMap<SampleId, &MetadataRecord> = metadata.iter().map(|m| (m.id, m)).collect();
    let mut violations = Vec::new();
    let mut owner: HashMap<SampleId, usize> = HashMap::new();
    let mut entity_owner: HashMap<String, usize> = HashMap::new();
    let mut class_histograms = vec![BTreeMap::new(); result.splits.len()];
    let mut entity_counts = vec![0; result.splits.len()];

    for (i, split) in result.splits.iter().enumerate() {
        for id in split {
            if let Some(prev) = owner.insert(*id, i) {
                violations.push(format!("id {id} in splits {prev} and {i}"));
            }
            let Some(m) = index.get(id) else {
                violations.push(format!("id {id} in split {i} has no metadata"));
                continue;
            };
            *class_histograms[i].entry(spec.class_of(m)).or_insert(0usize) += 1;
            let e = spec.entity_of(m);
            match entity_owner.get(&e) {
                Some(&j) if j != i => violations.push(format!("entity {e} in splits {j} and {i}")),
                Some(_) => {}
                None => {
                    entity_owner.insert(e, i);
                    entity_counts[i] += 1;
                }
            }
        }
    }
    let dropped: HashSet<SampleId> = result.dropped.iter().copied().collect();
    for m in metadata {
        if !owner.contains_key(&m.id) && !dropped.contains(&m.id) {
            violations.push(format!("id {} missing from every split", m.id));
        }
    }
    for (i, h) in class_histograms.iter().enumerate() {
        if result.class_histograms.get(i) != Some(h) {
            violations.push(format!("split {i} class histogram does not match its ids"));
        }
    }

    let sizes: Vec<usize> = result.splits.iter().map(Vec::len).collect();
    let n = metadata.len().max(1) as f64;
    let fractions: Vec<f64> = sizes.iter().map(|&s| s as f64 / n).collect();
    let ratio_deviation = fractions.iter().zip(&spec.ratios).map(|(a, t)| a - t).collect();
    SplitAudit {
        violations,
        sizes,
        fractions,
        ratio_deviation,
        entity_counts,
        class_histograms,
        dropped: result.dropped.len(),
        warnings: result.warnings.iter().map(ToString::to_string).collect(),
    }
}
