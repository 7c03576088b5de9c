use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::model::SampleId;

use super::{SplitAudit, SplitError, SplitResult, SplitSpec};

pub fn split_file_name(index: usize, count: usize) -> String {
    match (count, index) {
        (3, 0) => "train.uuids".into(),
        (3, 1) => "val.uuids".into(),
        (3, 2) => "test.uuids".into(),
        _ => format!("split{index}.uuids"),
    }
}

pub fn write_uuid_list(path: &Path, ids: &[SampleId]) -> Result<(), SplitError> {
    let mut text = String::with_capacity(ids.len() * 37);
    for id in ids {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))
}

/// One UUID per line; blank lines and `#` comments are ignored.
pub fn read_uuid_list(path: &Path) -> Result<Vec<SampleId>, SplitError> {
    let text = fs::read_to_string(path).map_err(|e| SplitError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .map(|(n, l)| (n, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            l.parse().map_err(|_| SplitError::Io(format!("{}:{}: bad uuid {l:?}", path.display(), n + 1)))
        })
        .collect()
}

/// Writes one list per split plus `splits.report`. Returns the list paths.
pub fn write_split_files(dir: &Path, result: &SplitResult, audit: &SplitAudit) -> Result<Vec<PathBuf>, SplitError> {
    fs::create_dir_all(dir).map_err(|e| SplitError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for (i, ids) in result.splits.iter().enumerate() {
        let p = dir.join(split_file_name(i, result.splits.len()));
        write_uuid_list(&p, ids)?;
        paths.push(p);
    }
    if !result.dropped.is_empty() {
        write_uuid_list(&dir.join("dropped.uuids"), &result.dropped)?;
    }
    let report = dir.join("splits.report");
    fs::write(&report, audit.to_text()).map_err(|e| SplitError::Io(format!("{}: {e}", report.display())))?;
    Ok(paths)
}

/// Parses a key=value spec file:
///
/// ```text
/// ratios=0.8,0.1,0.1
/// entity_field=entity_id
/// class_field=class_label
/// target_class_proportions=0:0.5,1:0.5
/// tolerance=0.02
/// seed=7
/// ```
pub fn parse_split_spec(text: &str) -> Result<SplitSpec, SplitError> {
    let bad = |m: String| SplitError::InvalidSpec(m);
    let mut spec = SplitSpec::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("line {}: bad number {s:?}", n + 1)));
        match k {
            "ratios" => spec.ratios = v.split(',').map(num).collect::<Result<_, _>>()?,
            "entity_field" => spec.entity_field = v.into(),
            "class_field" => spec.class_field = v.into(),
            "tolerance" => spec.tolerance = num(v)?,
            "seed" => spec.seed = v.parse().map_err(|_| bad(format!("line {}: bad seed", n + 1)))?,
            "target_class_proportions" => {
                let mut t = BTreeMap::new();
                for pair in v.split(',') {
                    let (c, f) = pair.split_once(':').ok_or_else(|| bad(format!("line {}: expected class:fraction", n + 1)))?;
                    let c = c.trim().parse().map_err(|_| bad(format!("line {}: bad class {c:?}", n + 1)))?;
                    t.insert(c, num(f)?);
                }
                spec.target_class_proportions = Some(t);
            }
            _ => return Err(bad(format!("line {}: unknown key {k:?}", n + 1))),
        }
    }
    spec.validate()?;
    Ok(spec)
}
