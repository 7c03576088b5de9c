use std::collections::HashMap;
use std::fmt::Write as _;

use super::{ModelError, Rng, SampleId};

/// Shuffled, batched order for one epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochPlan {
    pub epoch_index: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
    pub batches: Vec<Vec<SampleId>>,
}

impl EpochPlan {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn num_items(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Vec::len).collect()
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = &SampleId> {
        self.batches.iter().flatten()
    }

    /// One batch per line, ids separated by commas.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.num_items() * 37);
        for batch in &self.batches {
            for (i, id) in batch.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{id}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the text produced by [`EpochPlan::to_text`] back into batches.
pub fn parse_plan_text(text: &str) -> Result<Vec<Vec<SampleId>>, ModelError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| line.split(',').map(|s| s.trim().parse()).collect())
        .collect()
}

/// Builds the plan for `epoch_index`: a Fisher–Yates permutation of `ids`
/// driven by `Rng(seed, stream = epoch_index)`, cut into `batch_size` chunks.
pub fn make_epoch_plan(
    ids: &[SampleId],
    batch_size: usize,
    seed: u64,
    epoch_index: u64,
    drop_last: bool,
) -> Result<EpochPlan, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::InvalidInput("empty id list".into()));
    }
    if batch_size == 0 {
        return Err(ModelError::InvalidInput("batch size must be at least 1".into()));
    }
    let mut order = ids.to_vec();
    Rng::new(seed, epoch_index).shuffle(&mut order);
    let usable = if drop_last {
        order.len() - order.len() % batch_size
    } else {
        order.len()
    };
    let batches = order[..usable].chunks(batch_size).map(<[SampleId]>::to_vec).collect();
    Ok(EpochPlan {
        epoch_index,
        batch_size,
        seed,
        drop_last,
        batches,
    })
}

/// True iff `plan` is a valid batching of `ids`: sizes are right and the
/// planned ids are the input multiset minus at most `batch_size - 1` ids
/// (exactly `len % batch_size`) when `drop_last` is set.
pub fn plan_consistency_check(plan: &EpochPlan, ids: &[SampleId]) -> bool {
    if plan.batch_size == 0 {
        return false;
    }
    let n = plan.batches.len();
    for (i, batch) in plan.batches.iter().enumerate() {
        let last = i + 1 == n;
        let ok = if plan.drop_last || !last {
            batch.len() == plan.batch_size
        } else {
            (1..=plan.batch_size).contains(&batch.len())
        };
        if !ok {
            return false;
        }
    }
    let expected_dropped = if plan.drop_last { ids.len() % plan.batch_size } else { 0 };
    if plan.num_items() + expected_dropped != ids.len() {
        return false;
    }
    let mut counts: HashMap<SampleId, i64> = HashMap::with_capacity(ids.len());
    for id in ids {
        *counts.entry(*id).or_default() += 1;
    }
    for id in plan.iter_ids() {
        match counts.get_mut(id) {
            Some(c) if *c > 0 => *c -= 1,
            _ => return false,
        }
    }
    true
}
