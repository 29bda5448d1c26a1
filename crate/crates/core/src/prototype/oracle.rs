use std::collections::BTreeMap;

use super::dictionary::Decision;
use crate::error::{Error, Result};
use crate::ingest::PatchRecord;
use crate::labels::{ClassId, TissueLabelMap};

pub const DEFAULT_PURITY_THRESHOLD: f64 = 0.8;

/// Mean ground-truth class proportions over the inspected patches.
///
/// Each class's values are summed in sorted order so the result does not
/// depend on the order of `inspected`.
pub fn mean_proportions(
    inspected: &[&PatchRecord],
    label_map: &TissueLabelMap,
) -> Result<BTreeMap<ClassId, f64>> {
    if inspected.is_empty() {
        return Err(Error::Empty("inspected patch list"));
    }
    let mut per_class: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for rec in inspected {
        let props = rec.gt_proportions.as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "patch {} has no ground-truth proportions",
                rec.patch_id
            ))
        })?;
        for (&class, &p) in props {
            label_map.check(class)?;
            per_class.entry(class).or_default().push(p);
        }
    }
    let n = inspected.len() as f64;
    Ok(per_class
        .into_iter()
        .map(|(class, mut values)| {
            values.sort_by(f64::total_cmp);
            (class, values.iter().sum::<f64>() / n)
        })
        .collect())
}

/// Simulated rater: the cluster is labeled with the class whose mean pixel
/// proportion over the inspected patches strictly exceeds `threshold`,
/// otherwise it is dropped as a mixture.
pub fn simulated_label(
    inspected: &[&PatchRecord],
    label_map: &TissueLabelMap,
    threshold: f64,
) -> Result<Decision> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "purity threshold {threshold} must be in [0, 1)"
        )));
    }
    let mean = mean_proportions(inspected, label_map)?;
    let best = mean
        .iter()
        .filter(|(_, &p)| p > threshold)
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)));
    Ok(match best {
        Some((&class, _)) => Decision::Tissue { class_id: class },
        None => Decision::Dropped,
    })
}
