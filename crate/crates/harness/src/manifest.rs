//! Dataset manifests.
//!
//! One JSON document describes the base session and every incremental
//! session: class ids with per-class train/eval item lists. Items are WAV
//! paths relative to the manifest's directory (`kind: "audio"`) or clip
//! ids into an embedding file (`kind: "embeddings"`). The pseudo-novel
//! half of the base split may be pinned in the manifest; otherwise it is
//! drawn from the run seed.
//!
//! Validation is strict: session label sets must be pairwise disjoint,
//! every class needs train and eval items, incremental sessions must be
//! rectangular (same train count for every class), and audio items must
//! exist on disk.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Audio,
    Embeddings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: u32,
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSpec {
    pub classes: Vec<ClassSpec>,
}

impl SessionSpec {
    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn class(&self, id: u32) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub kind: ManifestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    /// Pinned pseudo-novel class ids of the base split, if fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_novel_classes: Option<Vec<u32>>,
    pub base: SessionSpec,
    #[serde(default)]
    pub sessions: Vec<SessionSpec>,
}

/// A manifest bound to the directory it was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

/// Class-level split of the base session into pseudo-base and
/// pseudo-novel halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseSplit {
    pub pseudo_base: Vec<u32>,
    pub pseudo_novel: Vec<u32>,
}

/// Seeded class-level split: `pseudo_novel_count` classes become the
/// pseudo-novel half.
pub fn stdu_split(base_classes: &[u32], pseudo_novel_count: usize, seed: u64) -> Result<BaseSplit> {
    if pseudo_novel_count == 0 || pseudo_novel_count >= base_classes.len() {
        return Err(HarnessError::config(format!(
            "pseudo-novel count {pseudo_novel_count} must lie in 1..{}",
            base_classes.len()
        )));
    }
    let mut ids = base_classes.to_vec();
    let mut rng = protolearn_core::rng::stage_rng(seed, "stdu-split");
    ids.shuffle(&mut rng);
    let pseudo_novel: BTreeSet<u32> = ids[..pseudo_novel_count].iter().copied().collect();
    Ok(BaseSplit {
        pseudo_base: base_classes.iter().copied().filter(|c| !pseudo_novel.contains(c)).collect(),
        pseudo_novel: pseudo_novel.into_iter().collect(),
    })
}

impl LoadedManifest {
    /// Resolve an item to a filesystem path (audio manifests).
    pub fn resolve(&self, item: &str) -> PathBuf {
        self.dir.join(item)
    }

    pub fn base_class_ids(&self) -> Vec<u32> {
        self.manifest.base.class_ids()
    }

    pub fn num_sessions(&self) -> usize {
        1 + self.manifest.sessions.len()
    }

    /// The base split, pinned by the manifest or drawn from the seed.
    pub fn base_split(&self, pseudo_novel_count: Option<usize>, seed: u64) -> Result<BaseSplit> {
        let base_ids = self.base_class_ids();
        if let Some(pinned) = &self.manifest.pseudo_novel_classes {
            let pinned_set: BTreeSet<u32> = pinned.iter().copied().collect();
            return Ok(BaseSplit {
                pseudo_base: base_ids.iter().copied().filter(|c| !pinned_set.contains(c)).collect(),
                pseudo_novel: pinned_set.into_iter().collect(),
            });
        }
        let count = pseudo_novel_count
            .ok_or_else(|| HarnessError::config("manifest does not pin the base split; set stdu.pseudo_novel_classes"))?;
        stdu_split(&base_ids, count, seed)
    }
}

fn validate(manifest: &Manifest, dir: &Path) -> Result<()> {
    if manifest.version != 1 {
        return Err(HarnessError::manifest(format!("unsupported manifest version {}", manifest.version)));
    }
    match manifest.kind {
        ManifestKind::Embeddings => {
            if manifest.embeddings_file.is_none() || manifest.embedding_dim.is_none() {
                return Err(HarnessError::manifest(
                    "embeddings manifest needs embeddings_file and embedding_dim",
                ));
            }
        }
        ManifestKind::Audio => {}
    }

    let mut seen = BTreeSet::new();
    let mut check_session = |spec: &SessionSpec, what: &str, rectangular: bool| -> Result<()> {
        if spec.classes.is_empty() {
            return Err(HarnessError::manifest(format!("{what} has no classes")));
        }
        let mut train_count: Option<usize> = None;
        for class in &spec.classes {
            if !seen.insert(class.id) {
                return Err(HarnessError::manifest(format!(
                    "class {} appears in more than one session",
                    class.id
                )));
            }
            if class.train.is_empty() || class.eval.is_empty() {
                return Err(HarnessError::manifest(format!(
                    "class {} in {what} needs train and eval items",
                    class.id
                )));
            }
            if rectangular {
                match train_count {
                    None => train_count = Some(class.train.len()),
                    Some(n) if n != class.train.len() => {
                        return Err(HarnessError::manifest(format!(
                            "{what} is not N-way K-shot shaped: class {} has {} train items, expected {n}",
                            class.id,
                            class.train.len()
                        )));
                    }
                    _ => {}
                }
            }
            if manifest.kind == ManifestKind::Audio {
                for item in class.train.iter().chain(&class.eval) {
                    let path = dir.join(item);
                    if !path.is_file() {
                        return Err(HarnessError::manifest(format!("missing file {}", path.display())));
                    }
                }
            }
        }
        Ok(())
    };

    check_session(&manifest.base, "base session", false)?;
    for (i, s) in manifest.sessions.iter().enumerate() {
        check_session(s, &format!("session {}", i + 1), true)?;
    }

    if let Some(pinned) = &manifest.pseudo_novel_classes {
        let base: BTreeSet<u32> = manifest.base.class_ids().into_iter().collect();
        if pinned.is_empty() || pinned.len() >= base.len() {
            return Err(HarnessError::manifest("pinned pseudo-novel split must be a proper subset of the base classes"));
        }
        for c in pinned {
            if !base.contains(c) {
                return Err(HarnessError::manifest(format!("pinned pseudo-novel class {c} is not a base class")));
            }
        }
    }

    if manifest.kind == ManifestKind::Embeddings {
        let file = dir.join(manifest.embeddings_file.as_ref().unwrap());
        if !file.is_file() {
            return Err(HarnessError::manifest(format!("missing embeddings file {}", file.display())));
        }
    }
    Ok(())
}

/// Load and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::manifest(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    validate(&manifest, &dir)?;
    Ok(LoadedManifest { manifest, dir })
}

/// Serialize a manifest next to its data.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| HarnessError::runtime(e))?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embeddings_manifest(dir: &Path, sessions: Vec<SessionSpec>, base_ids: &[u32]) -> PathBuf {
        // a tiny embedding file covering all referenced ids
        let mut table = crate::embedfile::EmbeddingTable::new(2);
        let base = SessionSpec {
            classes: base_ids
                .iter()
                .map(|&id| ClassSpec {
                    id,
                    train: vec![format!("c{id}_t0"), format!("c{id}_t1")],
                    eval: vec![format!("c{id}_e0")],
                })
                .collect(),
        };
        for spec in std::iter::once(&base).chain(&sessions) {
            for class in &spec.classes {
                for item in class.train.iter().chain(&class.eval) {
                    table.insert(item.clone(), Some(class.id), vec![0.0, 1.0]).unwrap();
                }
            }
        }
        crate::embedfile::write_text(&dir.join("emb.tsv"), &table).unwrap();
        let manifest = Manifest {
            version: 1,
            kind: ManifestKind::Embeddings,
            embeddings_file: Some("emb.tsv".into()),
            embedding_dim: Some(2),
            pseudo_novel_classes: None,
            base,
            sessions,
        };
        let path = dir.join("manifest.json");
        save_manifest(&path, &manifest).unwrap();
        path
    }

    fn session(ids: &[u32], shots: usize) -> SessionSpec {
        SessionSpec {
            classes: ids
                .iter()
                .map(|&id| ClassSpec {
                    id,
                    train: (0..shots).map(|s| format!("c{id}_t{s}")).collect(),
                    eval: vec![format!("c{id}_e0")],
                })
                .collect(),
        }
    }

    #[test]
    fn valid_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = embeddings_manifest(dir.path(), vec![session(&[10, 11], 2)], &[0, 1, 2]);
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.base_class_ids(), vec![0, 1, 2]);
        assert_eq!(loaded.num_sessions(), 2);
    }

    #[test]
    fn empty_incremental_list_is_base_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = embeddings_manifest(dir.path(), vec![], &[0, 1]);
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.num_sessions(), 1);
    }

    #[test]
    fn overlapping_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = embeddings_manifest(dir.path(), vec![session(&[2, 10], 2)], &[0, 1, 2]);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("more than one session"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ragged_incremental_sessions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ragged = session(&[10, 11], 2);
        ragged.classes[1].train.pop();
        let path = embeddings_manifest(dir.path(), vec![ragged], &[0, 1]);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("N-way K-shot"), "{err}");
    }

    #[test]
    fn stdu_split_partitions_the_label_set() {
        let classes: Vec<u32> = (0..55).collect();
        let split = stdu_split(&classes, 25, 9).unwrap();
        assert_eq!(split.pseudo_base.len(), 30);
        assert_eq!(split.pseudo_novel.len(), 25);
        let union: BTreeSet<u32> =
            split.pseudo_base.iter().chain(&split.pseudo_novel).copied().collect();
        assert_eq!(union, classes.iter().copied().collect::<BTreeSet<u32>>());
        // deterministic
        assert_eq!(stdu_split(&classes, 25, 9).unwrap(), split);
        assert_ne!(stdu_split(&classes, 25, 10).unwrap(), split);
        assert!(stdu_split(&classes, 55, 0).is_err());
    }

    #[test]
    fn pinned_split_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let path = embeddings_manifest(dir.path(), vec![], &[0, 1, 2, 3]);
        let mut loaded = load_manifest(&path).unwrap();
        loaded.manifest.pseudo_novel_classes = Some(vec![1, 3]);
        let split = loaded.base_split(None, 123).unwrap();
        assert_eq!(split.pseudo_novel, vec![1, 3]);
        assert_eq!(split.pseudo_base, vec![0, 2]);
    }
}
