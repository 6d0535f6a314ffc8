use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ingest::FeatureStats;
use super::{DatabaseEntry, EmbeddingVector, MotionDatabase};
use crate::agents::DecompositionSet;
use crate::error::{Error, Result};

pub const INDEX_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    embedding_dim: usize,
    provider_tag: String,
    count: usize,
    motion_root: PathBuf,
    #[serde(default)]
    feature_stats: Option<FeatureStats>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    id: String,
    motion_path: String,
    length: usize,
    fps: f64,
    texts_full: Vec<String>,
    decomposition: Option<DecompositionSet>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

/// Serialize `db` as JSONL: a header line, then one entry per line.
pub fn write_index(db: &MotionDatabase, out: &mut dyn Write) -> Result<()> {
    db.validate()?;
    for e in &db.entries {
        for (key, _) in e.descriptions() {
            if !e.embeddings.contains_key(key) {
                return Err(Error::invalid(format!("entry {} is not embedded ({key})", e.id)));
            }
        }
    }
    let header = Header {
        schema_version: INDEX_SCHEMA_VERSION,
        embedding_dim: db.embedding_dim,
        provider_tag: db.provider_tag.clone(),
        count: db.entries.len(),
        motion_root: db.motion_root.clone(),
        feature_stats: db.feature_stats.clone(),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    for e in &db.entries {
        let rec = EntryRecord {
            id: e.id.clone(),
            motion_path: e.motion_path.clone(),
            length: e.length,
            fps: e.fps,
            texts_full: e.texts_full.clone(),
            decomposition: e.decomposition.clone(),
            embeddings: e.embeddings.iter().map(|(k, v)| (k.clone(), v.values().to_vec())).collect(),
        };
        text.push_str(&serde_json::to_string(&rec).expect("entry serializes"));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<index>", e))
}

pub fn save_index(db: &MotionDatabase, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_index(db, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<MotionDatabase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, Some(1), "missing header line"))?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::parse(path, Some(1), e))?;
    let version = raw["schema_version"]
        .as_u64()
        .ok_or_else(|| Error::parse(path, Some(1), "header lacks schema_version"))?;
    if version != INDEX_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: INDEX_SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::parse(path, Some(1), e))?;

    let mut db = MotionDatabase::empty(header.motion_root);
    db.embedding_dim = header.embedding_dim;
    db.provider_tag = header.provider_tag;
    db.feature_stats = header.feature_stats;
    for (i, line) in lines {
        let lineno = i + 1;
        let rec: EntryRecord = serde_json::from_str(line).map_err(|e| Error::parse(path, Some(lineno), e))?;
        let mut embeddings = BTreeMap::new();
        for (key, values) in rec.embeddings {
            let v = EmbeddingVector::from_stored(values, db.provider_tag.clone())
                .map_err(|e| Error::parse(path, Some(lineno), format!("embedding {key}: {e}")))?;
            embeddings.insert(key, v);
        }
        db.entries.push(DatabaseEntry {
            id: rec.id,
            motion_path: rec.motion_path,
            length: rec.length,
            fps: rec.fps,
            texts_full: rec.texts_full,
            decomposition: rec.decomposition,
            embeddings,
        });
    }
    if db.entries.len() != header.count {
        return Err(Error::parse(
            path,
            None,
            format!("header announces {} entries, found {}", header.count, db.entries.len()),
        ));
    }
    db.validate().map_err(|e| Error::parse(path, None, e))?;
    Ok(db)
}
