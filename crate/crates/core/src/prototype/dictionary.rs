use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringResult;
use crate::embedding::{l2_normalize, norm};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::labels::{ClassId, TissueLabelMap};

pub const DICTIONARY_VERSION: u32 = 1;

/// Outcome of inspecting one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Tissue { class_id: ClassId },
    #[serde(rename = "drop")]
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rater {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterVerdict {
    pub cluster_index: usize,
    #[serde(flatten)]
    pub decision: Decision,
    pub decided_by: Rater,
    pub inspected_patch_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub prototype_id: usize,
    pub class_id: ClassId,
    pub source_cluster: usize,
    pub cluster_size: usize,
    pub centroid: Vec<f64>,
}

/// Labeled unit-norm centroids, queried by cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeDictionary {
    pub version: u32,
    pub dim: usize,
    pub label_map: TissueLabelMap,
    pub entries: Vec<PrototypeEntry>,
}

impl PrototypeDictionary {
    pub fn new(dim: usize, label_map: TissueLabelMap, entries: Vec<PrototypeEntry>) -> Result<Self> {
        let dict = Self {
            version: DICTIONARY_VERSION,
            dim,
            label_map,
            entries,
        };
        dict.validate()?;
        Ok(dict)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DICTIONARY_VERSION {
            return Err(Error::Version {
                what: "prototype dictionary",
                expected: DICTIONARY_VERSION,
                found: self.version,
            });
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        let mut last_id = None;
        for e in &self.entries {
            if e.centroid.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: e.centroid.len(),
                });
            }
            if e.centroid.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prototype centroid"));
            }
            if (norm(&e.centroid) - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "prototype {} is not unit-norm",
                    e.prototype_id
                )));
            }
            self.label_map.check(e.class_id)?;
            if last_id.is_some_and(|l| e.prototype_id <= l) {
                return Err(Error::invalid("prototype ids must be strictly increasing"));
            }
            last_id = Some(e.prototype_id);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Prototype count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_map.len()];
        for e in &self.entries {
            counts[e.class_id as usize] += 1;
        }
        counts
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct VersionProbe {
            version: u32,
        }
        let probe: VersionProbe = serde_json::from_slice(bytes)?;
        if probe.version != DICTIONARY_VERSION {
            return Err(Error::Version {
                what: "prototype dictionary",
                expected: DICTIONARY_VERSION,
                found: probe.version,
            });
        }
        let dict: Self = serde_json::from_slice(bytes)?;
        dict.validate()?;
        Ok(dict)
    }
}

/// One entry per `Tissue` verdict, in cluster order, carrying the
/// re-normalized cluster centroid.
pub fn build_dictionary(
    result: &ClusteringResult,
    verdicts: &[ClusterVerdict],
    label_map: &TissueLabelMap,
) -> Result<PrototypeDictionary> {
    if verdicts.len() != result.k {
        return Err(Error::invalid(format!(
            "{} verdicts for {} clusters",
            verdicts.len(),
            result.k
        )));
    }
    let mut ordered: Vec<&ClusterVerdict> = verdicts.iter().collect();
    ordered.sort_by_key(|v| v.cluster_index);
    let mut seen = HashSet::new();
    for v in &ordered {
        if v.cluster_index >= result.k || !seen.insert(v.cluster_index) {
            return Err(Error::invalid(format!(
                "verdict for cluster {} is out of range or duplicated",
                v.cluster_index
            )));
        }
    }
    let mut entries = Vec::new();
    for v in ordered {
        if let Decision::Tissue { class_id } = v.decision {
            label_map.check(class_id)?;
            entries.push(PrototypeEntry {
                prototype_id: entries.len(),
                class_id,
                source_cluster: v.cluster_index,
                cluster_size: result.cluster_sizes[v.cluster_index],
                centroid: l2_normalize(&result.centroids[v.cluster_index])?,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    PrototypeDictionary::new(result.dim, label_map.clone(), entries)
}

pub fn save_dictionary(dict: &PrototypeDictionary, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &dict.to_json_bytes()?)
}

pub fn load_dictionary(path: &Path) -> Result<PrototypeDictionary> {
    PrototypeDictionary::from_json_bytes(&fsutil::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_with(k: usize, dim: usize) -> ClusteringResult {
        let centroids: Vec<Vec<f64>> = (0..k)
            .map(|j| (0..dim).map(|d| ((j * 7 + d * 3) % 11) as f64 + 0.5).collect())
            .collect();
        ClusteringResult {
            k,
            dim,
            centroids,
            assignments: (0..k as u32).collect(),
            inertia: 0.0,
            cluster_sizes: vec![1; k],
            iterations_run: 1,
            converged: true,
            rng_seed: 0,
            restart_seed: 0,
            duplicate_centroids: false,
            inertia_history: vec![0.0],
        }
    }

    fn verdict(i: usize, d: Decision) -> ClusterVerdict {
        ClusterVerdict {
            cluster_index: i,
            decision: d,
            decided_by: Rater::Oracle,
            inspected_patch_ids: vec![],
        }
    }

    #[test]
    fn thirty_clusters_with_five_drops() {
        let labels = TissueLabelMap::from_names(["tumor", "stroma", "inflammatory", "necrosis", "other"]).unwrap();
        let r = result_with(30, 4);
        let counts = [13usize, 5, 3, 1, 3];
        let mut verdicts = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                verdicts.push(verdict(verdicts.len(), Decision::Tissue { class_id: class as ClassId }));
            }
        }
        while verdicts.len() < 30 {
            verdicts.push(verdict(verdicts.len(), Decision::Dropped));
        }
        let d = build_dictionary(&r, &verdicts, &labels).unwrap();
        assert_eq!(d.len(), 25);
        assert_eq!(d.class_counts(), counts.to_vec());
        for e in &d.entries {
            let expected = l2_normalize(&r.centroids[e.source_cluster]).unwrap();
            for (a, b) in e.centroid.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_class_and_all_dropped() {
        let labels = TissueLabelMap::numbered(2).unwrap();
        let r = result_with(2, 3);
        let v = [verdict(1, Decision::Tissue { class_id: 0 }), verdict(0, Decision::Tissue { class_id: 0 })];
        let d = build_dictionary(&r, &v, &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.entries[0].source_cluster, 0);

        let r1 = result_with(1, 3);
        assert!(matches!(
            build_dictionary(&r1, &[verdict(0, Decision::Dropped)], &labels),
            Err(Error::EmptyDictionary)
        ));
        assert!(build_dictionary(&r, &v[..1], &labels).is_err());
        let dup = [verdict(0, Decision::Dropped), verdict(0, Decision::Dropped)];
        assert!(build_dictionary(&r, &dup, &labels).is_err());
        let bad_class = [verdict(0, Decision::Tissue { class_id: 5 }), verdict(1, Decision::Dropped)];
        assert!(build_dictionary(&r, &bad_class, &labels).is_err());
    }

    #[test]
    fn verdict_json_shape() {
        let v = verdict(3, Decision::Tissue { class_id: 2 });
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"cluster_index":3,"decision":"tissue","class_id":2,"decided_by":"oracle","inspected_patch_ids":[]}"#);
        assert_eq!(serde_json::from_str::<ClusterVerdict>(&s).unwrap(), v);
        let d: Decision = serde_json::from_str(r#"{"decision":"drop"}"#).unwrap();
        assert_eq!(d, Decision::Dropped);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let labels = TissueLabelMap::numbered(3).unwrap();
        let r = result_with(3, 5);
        let v: Vec<ClusterVerdict> = (0..3).map(|i| verdict(i, Decision::Tissue { class_id: i as ClassId })).collect();
        let d = build_dictionary(&r, &v, &labels).unwrap();
        let p = dir.path().join("dict.json");
        save_dictionary(&d, &p).unwrap();
        let back = load_dictionary(&p).unwrap();
        assert_eq!(back, d);
        for (a, b) in back.entries.iter().zip(&d.entries) {
            let x: Vec<u64> = a.centroid.iter().map(|v| v.to_bits()).collect();
            let y: Vec<u64> = b.centroid.iter().map(|v| v.to_bits()).collect();
            assert_eq!(x, y);
        }

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_dictionary(&p).is_err());

        let text = String::from_utf8(bytes).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_dictionary(&p), Err(Error::Version { .. })));

        let mut wrong_dim = d.clone();
        wrong_dim.dim = 4;
        assert!(wrong_dim.validate().is_err());
    }
}
