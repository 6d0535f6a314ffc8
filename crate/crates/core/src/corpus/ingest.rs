use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{embed_text, EmbeddingProvider};
use super::{resolve_root, DatabaseEntry, MotionDatabase};
use crate::agents::{decompose, AgentConfig, LlmProvider, PromptSet};
use crate::error::{Error, Result};
use crate::motion::{read_motion, to_pose_features, FeatureConfig, PoseFeatures};
use crate::util::{bounded_map, round_sig9};

/// One annotation record: `{"id", "motion", "texts"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub motion: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub max_in_flight: usize,
    pub max_retries: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            max_in_flight: 4,
            max_retries: 2,
        }
    }
}

/// Per-channel mean and standard deviation of pose features. Channels with
/// a deviation below 1e-6 get a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a PoseFeatures>) -> Result<Option<Self>> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for seq in seqs {
            if sum.is_empty() {
                sum = vec![0.0; seq.dim()];
                sq = vec![0.0; seq.dim()];
            } else if seq.dim() != sum.len() {
                return Err(Error::invalid("corpus mixes feature widths"));
            }
            for row in seq.rows() {
                for (c, v) in row.iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Ok(None);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                let s = var.sqrt();
                if s < 1e-6 {
                    1.0
                } else {
                    round_sig9(s)
                }
            })
            .collect();
        Ok(Some(FeatureStats {
            mean: mean.into_iter().map(round_sig9).collect(),
            std,
        }))
    }

    fn check(&self, x: &PoseFeatures) -> Result<()> {
        if x.dim() != self.mean.len() {
            return Err(Error::invalid(format!(
                "feature width {} does not match stats width {}",
                x.dim(),
                self.mean.len()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &PoseFeatures) -> Result<PoseFeatures> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.frames() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &PoseFeatures) -> Result<PoseFeatures> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.frames() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        Ok(out)
    }
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line).map_err(|e| Error::parse(path, Some(i + 1), e))?;
        if a.texts.iter().all(|t| t.trim().is_empty()) {
            return Err(Error::parse(path, Some(i + 1), format!("motion {:?} has no text", a.id)));
        }
        out.push(a);
    }
    Ok(out)
}

/// Read the annotation file and every referenced motion. The result carries
/// no decompositions or embeddings yet, but does carry feature statistics.
pub fn ingest_corpus(motion_dir: &Path, annotations: &Path, features: &FeatureConfig) -> Result<MotionDatabase> {
    let records = read_annotations(annotations)?;
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            dups.push(r.id.clone());
        }
    }
    if !dups.is_empty() {
        dups.dedup();
        return Err(Error::DuplicateId(dups.join(", ")));
    }

    let mut db = MotionDatabase::empty(resolve_root(motion_dir));
    let mut seqs = Vec::new();
    for r in records {
        let path = motion_dir.join(&r.motion);
        if !path.is_file() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("motion file for id {:?} not found", r.id)),
            ));
        }
        let (clip, skeleton) = read_motion(&path)?;
        if clip.len() >= 2 {
            seqs.push(to_pose_features(&clip, &skeleton, features)?);
        }
        db.entries.push(DatabaseEntry {
            id: r.id,
            motion_path: r.motion,
            length: clip.len(),
            fps: clip.fps,
            texts_full: r.texts.into_iter().filter(|t| !t.trim().is_empty()).collect(),
            decomposition: None,
            embeddings: BTreeMap::new(),
        });
    }
    db.feature_stats = FeatureStats::from_sequences(&seqs)?;
    Ok(db)
}

/// Carry decompositions and embeddings over from a previously built index
/// for entries whose id and prompts are unchanged.
pub fn reuse_cached(mut db: MotionDatabase, cached: &MotionDatabase) -> MotionDatabase {
    let mut reused_embeddings = false;
    for e in &mut db.entries {
        let Some(old) = cached.get(&e.id) else { continue };
        if old.texts_full != e.texts_full {
            continue;
        }
        if e.decomposition.is_none() {
            e.decomposition = old.decomposition.clone();
        }
        if e.decomposition == old.decomposition && !old.embeddings.is_empty() {
            e.embeddings = old.embeddings.clone();
            reused_embeddings = true;
        }
    }
    if reused_embeddings {
        db.embedding_dim = cached.embedding_dim;
        db.provider_tag = cached.provider_tag.clone();
    }
    db
}

/// Decompose every entry that lacks a decomposition (one sample each, seed
/// hint `seed`).
pub fn decompose_all(
    mut db: MotionDatabase,
    llm: &dyn LlmProvider,
    prompts: &PromptSet,
    agent: &AgentConfig,
    seed: u64,
) -> Result<MotionDatabase> {
    let todo: Vec<usize> = (0..db.entries.len()).filter(|&i| db.entries[i].decomposition.is_none()).collect();
    let inputs: Vec<String> = todo.iter().map(|&i| db.entries[i].decomposition_input()).collect();
    let results = bounded_map(&inputs, agent.max_in_flight, |_, text| decompose(llm, prompts, text, agent, seed));
    for (&i, r) in todo.iter().zip(results) {
        let id = &db.entries[i].id;
        let set = r.map_err(|e| match e {
            Error::Decomposition { reason, raw } => Error::Decomposition {
                reason: format!("entry {id}: {reason}"),
                raw,
            },
            Error::Provider { context, source } => Error::Provider {
                context: format!("entry {id}: {context}"),
                source,
            },
            other => other,
        })?;
        db.entries[i].decomposition = Some(set);
    }
    Ok(db)
}

/// Embed every description that lacks an embedding.
pub fn embed_all(mut db: MotionDatabase, provider: &dyn EmbeddingProvider, cfg: &BuildConfig) -> Result<MotionDatabase> {
    if db.embedding_dim != 0 && db.embedding_dim != provider.dim()
        && (db.provider_tag == provider.tag() || db.entries.iter().any(|e| !e.embeddings.is_empty())) {
            return Err(Error::invalid(format!(
                "database embedding dim {} does not match provider {} dim {}",
                db.embedding_dim,
                provider.tag(),
                provider.dim()
            )));
        }
    if !db.provider_tag.is_empty() && db.provider_tag != provider.tag() {
        // embeddings from another encoder are not comparable; start over
        for e in &mut db.entries {
            e.embeddings.clear();
        }
    }
    let mut jobs = Vec::new();
    for (i, e) in db.entries.iter().enumerate() {
        for (key, text) in e.descriptions() {
            if !e.embeddings.contains_key(key) {
                jobs.push((i, key, text.to_string()));
            }
        }
    }
    let results = bounded_map(&jobs, cfg.max_in_flight, |_, (_, _, text)| embed_text(provider, text, cfg.max_retries));
    for ((i, key, _), r) in jobs.iter().zip(results) {
        let entry = &mut db.entries[*i];
        let v = r.map_err(|e| match e {
            Error::Provider { source, .. } => Error::provider(format!("entry {} description {key}", entry.id), source),
            other => other,
        })?;
        entry.embeddings.insert(key.to_string(), v);
    }
    db.embedding_dim = provider.dim();
    db.provider_tag = provider.tag().to_string();
    Ok(db)
}
