//! The retrieval database: motions, their text descriptions at three
//! granularities, and unit-norm text embeddings.

mod embed;
mod index;
mod ingest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use embed::{
    embed_text, CountingEmbedder, EmbeddingProvider, EmbeddingVector, RemoteEmbedder, StubEmbedder, TableEmbedder,
    DEFAULT_EMBEDDING_DIM,
};
pub use index::{load_index, save_index, write_index, INDEX_SCHEMA_VERSION};
pub use ingest::{
    decompose_all, embed_all, ingest_corpus, reuse_cached, Annotation, BuildConfig, FeatureStats,
};

use crate::agents::DecompositionSet;
use crate::error::{Error, Result};
use crate::motion::{read_motion, MotionClip, Part, SkeletonDef};

/// One motion with its descriptions and embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseEntry {
    pub id: String,
    /// Relative to the database's motion root.
    pub motion_path: String,
    pub length: usize,
    pub fps: f64,
    /// All annotator prompts; the first is the full-body description.
    pub texts_full: Vec<String>,
    pub decomposition: Option<DecompositionSet>,
    /// Description key (see [`Part::key`]) to embedding.
    pub embeddings: BTreeMap<String, EmbeddingVector>,
}

impl DatabaseEntry {
    /// Newline-joined prompts, the input to decomposition.
    pub fn decomposition_input(&self) -> String {
        self.texts_full.join("\n")
    }

    pub fn description(&self, part: Part) -> Option<&str> {
        match part {
            Part::Full => self.texts_full.first().map(String::as_str),
            p => self.decomposition.as_ref().and_then(|d| d.text(p)),
        }
    }

    /// `(key, text)` for every description this entry carries.
    pub fn descriptions(&self) -> Vec<(&'static str, &str)> {
        Part::ALL
            .into_iter()
            .filter_map(|p| self.description(p).map(|t| (p.key(), t)))
            .collect()
    }

    pub fn embedding(&self, part: Part) -> Option<&EmbeddingVector> {
        self.embeddings.get(part.key())
    }
}

/// Immutable after load; readers may share it across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionDatabase {
    pub entries: Vec<DatabaseEntry>,
    /// 0 until embedded.
    pub embedding_dim: usize,
    pub provider_tag: String,
    pub motion_root: PathBuf,
    /// Per-channel feature mean/std over the corpus, for score-model
    /// normalization.
    pub feature_stats: Option<FeatureStats>,
}

impl MotionDatabase {
    pub fn empty(motion_root: impl Into<PathBuf>) -> Self {
        MotionDatabase {
            entries: Vec::new(),
            embedding_dim: 0,
            provider_tag: String::new(),
            motion_root: motion_root.into(),
            feature_stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatabaseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn motion_file(&self, entry: &DatabaseEntry) -> PathBuf {
        self.motion_root.join(&entry.motion_path)
    }

    pub fn load_motion(&self, id: &str) -> Result<(MotionClip, SkeletonDef)> {
        let entry = self
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no database entry {id:?}")))?;
        read_motion(&self.motion_file(entry))
    }

    /// Consistency checks applied after load and before save.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            if e.length == 0 {
                return Err(Error::invalid(format!("entry {} has zero length", e.id)));
            }
            if e.texts_full.is_empty() {
                return Err(Error::invalid(format!("entry {} has no text", e.id)));
            }
            if let Some(d) = &e.decomposition {
                d.validate().map_err(|err| Error::invalid(format!("entry {}: {err}", e.id)))?;
            }
            for (key, v) in &e.embeddings {
                if v.dim() != self.embedding_dim {
                    return Err(Error::invalid(format!(
                        "entry {} embedding {key} has dim {}, database dim {}",
                        e.id,
                        v.dim(),
                        self.embedding_dim
                    )));
                }
                if e.description(Part::from_key(key).ok_or_else(|| {
                    Error::invalid(format!("entry {} has unknown description key {key}", e.id))
                })?)
                .is_none()
                {
                    return Err(Error::invalid(format!("entry {} embeds missing description {key}", e.id)));
                }
            }
            if self.embedding_dim > 0 {
                for (key, _) in e.descriptions() {
                    if !e.embeddings.contains_key(key) {
                        return Err(Error::invalid(format!("entry {} lacks an embedding for {key}", e.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_fully_embedded(&self) -> bool {
        self.embedding_dim > 0
            && self
                .entries
                .iter()
                .all(|e| e.descriptions().iter().all(|(k, _)| e.embeddings.contains_key(*k)))
    }
}

pub(crate) fn resolve_root(dir: &Path) -> PathBuf {
    dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf())
}
