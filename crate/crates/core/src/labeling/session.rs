use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusteringResult;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::ingest::formats::read_set;
use crate::ingest::PatchEmbeddingSet;
use crate::labels::TissueLabelMap;
use crate::prototype::{
    build_dictionary, save_dictionary, sample_representatives, ClusterVerdict, Decision,
    PrototypeDictionary, Rater, SamplingStrategy,
};

pub const EVENT_LOG: &str = "events.jsonl";
pub const CLUSTERING_COPY: &str = "clustering.json";
pub const DICTIONARY_FILE: &str = "dictionary.json";

/// Everything needed to open a new session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSpec {
    pub clustering_path: PathBuf,
    pub patches_path: PathBuf,
    pub label_map: TissueLabelMap,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub strategy: SamplingStrategy,
    #[serde(default)]
    pub seed: u64,
}

fn default_t() -> usize {
    crate::prototype::DEFAULT_REPRESENTATIVES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        at_ms: u64,
        patches_path: PathBuf,
        label_map: TissueLabelMap,
        t: usize,
        strategy: SamplingStrategy,
        seed: u64,
        representatives: Vec<Vec<u64>>,
    },
    Verdict {
        at_ms: u64,
        revision: bool,
        verdict: ClusterVerdict,
    },
    Finalized {
        at_ms: u64,
        prototypes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Open,
    Complete,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub state: SessionState,
    pub k: usize,
    pub t: usize,
    pub strategy: SamplingStrategy,
    pub label_map: TissueLabelMap,
    pub decided: usize,
    pub pending: usize,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCard {
    pub cluster_index: usize,
    pub size: usize,
    pub representatives: Vec<u64>,
    pub verdict: Option<ClusterVerdict>,
}

/// A human labeling pass over one clustering, persisted as an append-only
/// event log inside its own directory.
#[derive(Debug)]
pub struct LabelingSession {
    id: String,
    dir: PathBuf,
    clustering: ClusteringResult,
    patches: PatchEmbeddingSet,
    patches_path: PathBuf,
    label_map: TissueLabelMap,
    t: usize,
    strategy: SamplingStrategy,
    representatives: Vec<Vec<u64>>,
    verdicts: Vec<Option<ClusterVerdict>>,
    finalized: bool,
    created_at_ms: u64,
    updated_at_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn new_session_id(clustering: &[u8], patches_path: &Path) -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let mut h = Sha256::new();
    h.update(clustering);
    h.update(patches_path.to_string_lossy().as_bytes());
    h.update(nanos.to_le_bytes());
    h.update(std::process::id().to_le_bytes());
    h.update(COUNTER.fetch_add(1, Ordering::Relaxed).to_le_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Session ids are 16 lowercase hex digits; anything else is rejected before
/// it can reach the filesystem.
pub fn is_valid_session_id(id: &str) -> bool {
    id.len() == 16 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn representatives_for(
    set: &PatchEmbeddingSet,
    clustering: &ClusteringResult,
    t: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    (0..clustering.k)
        .map(|c| {
            if clustering.cluster_sizes[c] == 0 {
                Ok(Vec::new())
            } else {
                sample_representatives(set, clustering, c, t, strategy, seed)
            }
        })
        .collect()
}

fn append_event(dir: &Path, event: &SessionEvent) -> Result<()> {
    let path = dir.join(EVENT_LOG);
    let mut line = serde_json::to_vec(event)?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::at_path(&path, e))?;
    f.write_all(&line).map_err(|e| Error::at_path(&path, e))?;
    f.sync_data().map_err(|e| Error::at_path(&path, e))?;
    Ok(())
}

impl LabelingSession {
    /// Creates `root/<session_id>/` with a copy of the clustering and the
    /// precomputed representatives for every cluster.
    pub fn start(root: &Path, spec: &SessionSpec) -> Result<Self> {
        if spec.t == 0 {
            return Err(Error::invalid("t must be positive"));
        }
        let clustering_bytes = fsutil::read(&spec.clustering_path)?;
        let clustering: ClusteringResult = serde_json::from_slice(&clustering_bytes)?;
        let patches = read_set(&spec.patches_path)?;
        clustering.validate(Some(patches.len()))?;
        if clustering.dim != patches.dim() {
            return Err(Error::DimensionMismatch {
                expected: clustering.dim,
                found: patches.dim(),
            });
        }
        let representatives =
            representatives_for(&patches, &clustering, spec.t, spec.strategy, spec.seed)?;

        let id = new_session_id(&clustering_bytes, &spec.patches_path);
        let dir = root.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::at_path(&dir, e))?;
        fsutil::write_atomic(&dir.join(CLUSTERING_COPY), &clustering_bytes)?;
        let patches_path = fs::canonicalize(&spec.patches_path)
            .map_err(|e| Error::at_path(&spec.patches_path, e))?;
        let at_ms = now_ms();
        append_event(
            &dir,
            &SessionEvent::Created {
                session_id: id.clone(),
                at_ms,
                patches_path: patches_path.clone(),
                label_map: spec.label_map.clone(),
                t: spec.t,
                strategy: spec.strategy,
                seed: spec.seed,
                representatives: representatives.clone(),
            },
        )?;
        Ok(Self {
            id,
            dir,
            verdicts: vec![None; clustering.k],
            clustering,
            patches,
            patches_path,
            label_map: spec.label_map.clone(),
            t: spec.t,
            strategy: spec.strategy,
            representatives,
            finalized: false,
            created_at_ms: at_ms,
            updated_at_ms: at_ms,
        })
    }

    /// Rebuilds a session by replaying its event log. A torn final line from
    /// an interrupted append is ignored.
    pub fn open(dir: &Path) -> Result<Self> {
        let log = dir.join(EVENT_LOG);
        let file = File::open(&log).map_err(|e| Error::at_path(&log, e))?;
        let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
        let mut events = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<SessionEvent>(line) {
                Ok(ev) => events.push(ev),
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => return Err(Error::format("session event log", format!("line {}: {e}", i + 1))),
            }
        }
        let mut it = events.into_iter();
        let Some(SessionEvent::Created {
            session_id,
            at_ms,
            patches_path,
            label_map,
            t,
            strategy,
            seed: _,
            representatives,
        }) = it.next()
        else {
            return Err(Error::format("session event log", "first event is not `created`"));
        };
        let clustering: ClusteringResult = fsutil::read_json(&dir.join(CLUSTERING_COPY))?;
        let patches = read_set(&patches_path)?;
        clustering.validate(Some(patches.len()))?;
        if representatives.len() != clustering.k {
            return Err(Error::format("session event log", "representatives do not match k"));
        }
        let mut session = Self {
            id: session_id,
            dir: dir.to_path_buf(),
            verdicts: vec![None; clustering.k],
            clustering,
            patches,
            patches_path,
            label_map,
            t,
            strategy,
            representatives,
            finalized: false,
            created_at_ms: at_ms,
            updated_at_ms: at_ms,
        };
        for ev in it {
            match ev {
                SessionEvent::Verdict { at_ms, revision, verdict } => {
                    session.apply_verdict(verdict, revision)?;
                    session.updated_at_ms = at_ms;
                }
                SessionEvent::Finalized { at_ms, .. } => {
                    session.finalized = true;
                    session.updated_at_ms = at_ms;
                }
                SessionEvent::Created { .. } => {
                    return Err(Error::format("session event log", "duplicate `created` event"));
                }
            }
        }
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn k(&self) -> usize {
        self.clustering.k
    }

    pub fn clustering(&self) -> &ClusteringResult {
        &self.clustering
    }

    pub fn label_map(&self) -> &TissueLabelMap {
        &self.label_map
    }

    pub fn verdicts(&self) -> &[Option<ClusterVerdict>] {
        &self.verdicts
    }

    pub fn pending_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_none()).count()
    }

    pub fn state(&self) -> SessionState {
        if self.finalized {
            SessionState::Finalized
        } else if self.pending_count() == 0 {
            SessionState::Complete
        } else {
            SessionState::Open
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            state: self.state(),
            k: self.k(),
            t: self.t,
            strategy: self.strategy,
            label_map: self.label_map.clone(),
            decided: self.k() - self.pending_count(),
            pending: self.pending_count(),
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
        }
    }

    fn check_cluster(&self, cluster_index: usize) -> Result<()> {
        if cluster_index >= self.k() {
            return Err(Error::OutOfRange {
                index: cluster_index,
                len: self.k(),
            });
        }
        Ok(())
    }

    pub fn card(&self, cluster_index: usize) -> Result<ClusterCard> {
        self.check_cluster(cluster_index)?;
        Ok(ClusterCard {
            cluster_index,
            size: self.clustering.cluster_sizes[cluster_index],
            representatives: self.representatives[cluster_index].clone(),
            verdict: self.verdicts[cluster_index].clone(),
        })
    }

    pub fn cards(&self) -> Vec<ClusterCard> {
        (0..self.k()).map(|c| self.card(c).expect("in range")).collect()
    }

    /// Thumbnail file of the `j`-th representative of a cluster. Relative
    /// paths are resolved against the patch set's directory.
    pub fn thumbnail_path(&self, cluster_index: usize, j: usize) -> Result<PathBuf> {
        self.check_cluster(cluster_index)?;
        let reps = &self.representatives[cluster_index];
        let &patch_id = reps.get(j).ok_or(Error::OutOfRange {
            index: j,
            len: reps.len(),
        })?;
        let record = self
            .patches
            .position_of(patch_id)
            .and_then(|i| self.patches.get(i))
            .ok_or_else(|| Error::invalid(format!("patch {patch_id} missing from patch set")))?;
        let thumb = record
            .thumbnail
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("patch {patch_id} has no thumbnail")))?;
        let p = PathBuf::from(thumb);
        Ok(if p.is_absolute() {
            p
        } else {
            self.patches_path.parent().unwrap_or(Path::new(".")).join(p)
        })
    }

    fn apply_verdict(&mut self, verdict: ClusterVerdict, revision: bool) -> Result<()> {
        let c = verdict.cluster_index;
        self.check_cluster(c)?;
        if let Decision::Tissue { class_id } = verdict.decision {
            self.label_map.check(class_id)?;
        }
        if self.verdicts[c].is_some() && !revision {
            return Err(Error::Conflict(format!(
                "cluster {c} is already decided; resubmit as a revision to change it"
            )));
        }
        self.verdicts[c] = Some(verdict);
        self.finalized = false;
        Ok(())
    }

    /// Records a human verdict for one cluster. Returns the number of clusters
    /// still pending.
    pub fn decide(&mut self, cluster_index: usize, decision: Decision, revision: bool) -> Result<usize> {
        self.check_cluster(cluster_index)?;
        let verdict = ClusterVerdict {
            cluster_index,
            decision,
            decided_by: Rater::Human,
            inspected_patch_ids: self.representatives[cluster_index].clone(),
        };
        let was_finalized = self.finalized;
        let previous = self.verdicts[cluster_index].clone();
        self.apply_verdict(verdict.clone(), revision)?;
        let at_ms = now_ms();
        if let Err(e) = append_event(&self.dir, &SessionEvent::Verdict { at_ms, revision, verdict }) {
            self.verdicts[cluster_index] = previous;
            self.finalized = was_finalized;
            return Err(e);
        }
        self.updated_at_ms = at_ms;
        Ok(self.pending_count())
    }

    /// Builds the dictionary from the recorded verdicts and writes it to
    /// `dictionary.json` in the session directory.
    pub fn finalize(&mut self) -> Result<PrototypeDictionary> {
        let pending = self.pending_count();
        if pending > 0 {
            return Err(Error::Conflict(format!("{pending} clusters are still pending")));
        }
        let verdicts: Vec<ClusterVerdict> = self.verdicts.iter().flatten().cloned().collect();
        let dict = build_dictionary(&self.clustering, &verdicts, &self.label_map)?;
        save_dictionary(&dict, &self.dictionary_path())?;
        let at_ms = now_ms();
        append_event(
            &self.dir,
            &SessionEvent::Finalized {
                at_ms,
                prototypes: dict.len(),
            },
        )?;
        self.finalized = true;
        self.updated_at_ms = at_ms;
        Ok(dict)
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.dir.join(DICTIONARY_FILE)
    }

    /// Hash of the observable session state, used to check that a reload
    /// reproduces it.
    pub fn state_digest(&self) -> String {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            summary: SessionSummary,
            cards: Vec<ClusterCard>,
            clustering: &'a ClusteringResult,
        }
        let snap = Snapshot {
            summary: self.summary(),
            cards: self.cards(),
            clustering: &self.clustering,
        };
        let bytes = serde_json::to_vec(&snap).expect("session state serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Opens every session directory under `root`.
pub fn load_sessions(root: &Path) -> Result<Vec<LabelingSession>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::at_path(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.join(EVENT_LOG).is_file()
                && p.file_name().and_then(|n| n.to_str()).is_some_and(is_valid_session_id)
        })
        .collect();
    dirs.sort();
    for d in dirs {
        out.push(LabelingSession::open(&d)?);
    }
    Ok(out)
}
