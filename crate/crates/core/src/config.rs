//! Engine configuration. Values resolve as CLI flag > environment variable >
//! config file > built-in default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, FixtureLlm, LlmProvider, PromptSet, RemoteLlm};
use crate::corpus::{load_index, EmbeddingProvider, MotionDatabase, RemoteEmbedder, StubEmbedder, TableEmbedder};
use crate::diffusion::{GaussianPrior, GaussianScore, NoiseSchedule, SamplerMode, ScoreModel, SdeditConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::motion::{BodyPartMasks, FeatureConfig, RootRotationOwner, SkeletonDef};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub index: Option<PathBuf>,
    pub skeleton: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub score_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    #[default]
    Remote,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub provider: LlmKind,
    pub fixture: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            provider: LlmKind::Remote,
            fixture: None,
            base_url: "https://api.openai.com".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    #[default]
    Stub,
    Table,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSettings {
    pub provider: EmbedKind,
    pub dim: usize,
    pub table: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    pub max_retries: u32,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        EmbedSettings {
            provider: EmbedKind::Stub,
            dim: crate::corpus::DEFAULT_EMBEDDING_DIM,
            table: None,
            base_url: "https://api.openai.com".into(),
            model: "text-embedding-3-small".into(),
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EngineConfig {
    pub paths: Paths,
    pub llm: LlmSettings,
    pub embedding: EmbedSettings,
    pub retrieval: RetrievalConfig,
    pub agent: AgentConfig,
    pub sdedit: SdeditConfig,
    pub schedule: NoiseSchedule,
    pub features: FeatureConfig,
    pub root_rotation_owner: RootRotationOwner,
    pub metrics: MetricConfig,
    pub seed: u64,
}


/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub index: Option<PathBuf>,
    pub score_model: Option<PathBuf>,
    pub llm_fixture: Option<PathBuf>,
    pub t0: Option<f64>,
    pub steps: Option<usize>,
    pub mode: Option<SamplerMode>,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
}

pub const ENV_SEED: &str = "RMD_SEED";
pub const ENV_INDEX: &str = "RMD_INDEX";
pub const ENV_SCORE_MODEL: &str = "RMD_SCORE_MODEL";
pub const ENV_LLM_FIXTURE: &str = "RMD_LLM_FIXTURE";
pub const ENV_EMBED_BASE_URL: &str = "RMD_EMBED_BASE_URL";
pub const ENV_EMBED_MODEL: &str = "RMD_EMBED_MODEL";
pub const ENV_T0: &str = "RMD_T0";
pub const ENV_STEPS: &str = "RMD_STEPS";
pub const ENV_MODE: &str = "RMD_MODE";
pub const ENV_LAMBDA: &str = "RMD_LAMBDA";
pub const ENV_K: &str = "RMD_K";

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("environment variable {name}={value:?} is not valid")))
}

fn rebase(dir: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = dir.join(&*path);
        }
    }
}

impl EngineConfig {
    /// Parse a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: EngineConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.index,
            &mut cfg.paths.skeleton,
            &mut cfg.paths.masks,
            &mut cfg.paths.prompts,
            &mut cfg.paths.score_model,
            &mut cfg.llm.fixture,
            &mut cfg.embedding.table,
        ] {
            rebase(dir, p);
        }
        Ok(cfg)
    }

    /// Layer defaults, `file`, the environment (through `env`) and CLI
    /// `overrides`.
    pub fn resolve(file: Option<&Path>, env: &dyn Fn(&str) -> Option<String>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => EngineConfig::from_file(p)?,
            None => EngineConfig::default(),
        };
        cfg.apply_env(env)?;
        cfg.apply_overrides(overrides);
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = env(ENV_SEED) {
            self.seed = parse_env(ENV_SEED, &v)?;
        }
        if let Some(v) = env(ENV_INDEX) {
            self.paths.index = Some(v.into());
        }
        if let Some(v) = env(ENV_SCORE_MODEL) {
            self.paths.score_model = Some(v.into());
        }
        if let Some(v) = env(ENV_LLM_FIXTURE) {
            self.llm.fixture = Some(v.into());
            self.llm.provider = LlmKind::Fixture;
        }
        if let Some(v) = env(RemoteLlm::BASE_URL_ENV) {
            self.llm.base_url = v;
        }
        if let Some(v) = env(RemoteLlm::MODEL_ENV) {
            self.llm.model = v;
        }
        if let Some(v) = env(ENV_EMBED_BASE_URL) {
            self.embedding.base_url = v;
        }
        if let Some(v) = env(ENV_EMBED_MODEL) {
            self.embedding.model = v;
        }
        if let Some(v) = env(ENV_T0) {
            self.sdedit.t0 = parse_env(ENV_T0, &v)?;
        }
        if let Some(v) = env(ENV_STEPS) {
            self.sdedit.steps = parse_env(ENV_STEPS, &v)?;
        }
        if let Some(v) = env(ENV_MODE) {
            self.sdedit.mode = v.parse()?;
        }
        if let Some(v) = env(ENV_LAMBDA) {
            self.retrieval.lambda = parse_env(ENV_LAMBDA, &v)?;
        }
        if let Some(v) = env(ENV_K) {
            self.retrieval.k = parse_env(ENV_K, &v)?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.index {
            self.paths.index = Some(v.clone());
        }
        if let Some(v) = &o.score_model {
            self.paths.score_model = Some(v.clone());
        }
        if let Some(v) = &o.llm_fixture {
            self.llm.fixture = Some(v.clone());
            self.llm.provider = LlmKind::Fixture;
        }
        if let Some(v) = o.t0 {
            self.sdedit.t0 = v;
        }
        if let Some(v) = o.steps {
            self.sdedit.steps = v;
        }
        if let Some(v) = o.mode {
            self.sdedit.mode = v;
        }
        if let Some(v) = o.lambda {
            self.retrieval.lambda = v;
        }
        if let Some(v) = o.k {
            self.retrieval.k = v;
        }
    }

    /// Range checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.agent.validate()?;
        self.sdedit.validate()?;
        self.schedule.validate()?;
        if self.embedding.dim == 0 {
            return Err(Error::invalid("embedding dim must be at least 1"));
        }
        let files = [
            ("index", &self.paths.index),
            ("skeleton", &self.paths.skeleton),
            ("masks", &self.paths.masks),
            ("score_model", &self.paths.score_model),
            ("llm fixture", &self.llm.fixture),
            ("embedding table", &self.embedding.table),
        ];
        for (what, p) in files {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::invalid(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if let Some(p) = &self.paths.prompts {
            if !p.is_dir() {
                return Err(Error::invalid(format!("prompts directory {} does not exist", p.display())));
            }
        }
        if self.llm.provider == LlmKind::Fixture && self.llm.fixture.is_none() {
            return Err(Error::invalid("fixture LLM selected but no fixture file given"));
        }
        if self.embedding.provider == EmbedKind::Table && self.embedding.table.is_none() {
            return Err(Error::invalid("table embedder selected but no table file given"));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Result<SkeletonDef> {
        match &self.paths.skeleton {
            Some(p) => SkeletonDef::load(p),
            None => Ok(SkeletonDef::smpl22()),
        }
    }

    pub fn masks(&self, skeleton: &SkeletonDef) -> Result<BodyPartMasks> {
        match &self.paths.masks {
            Some(p) => BodyPartMasks::load(p, skeleton, self.root_rotation_owner),
            None => BodyPartMasks::default_for(skeleton, self.root_rotation_owner),
        }
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        match &self.paths.prompts {
            Some(dir) => PromptSet::load_dir(dir),
            None => Ok(PromptSet::default()),
        }
    }

    pub fn index_path(&self) -> Result<&Path> {
        self.paths
            .index
            .as_deref()
            .ok_or_else(|| Error::invalid("no index path configured"))
    }

    pub fn database(&self) -> Result<MotionDatabase> {
        load_index(self.index_path()?)
    }

    /// Score model; without a configured file, a standard normal prior in
    /// normalized feature space.
    pub fn score_model(&self) -> Result<Box<dyn ScoreModel>> {
        let prior = match &self.paths.score_model {
            Some(p) => GaussianPrior::load(p)?,
            None => {
                log::warn!("no score model configured; using a standard normal prior");
                GaussianPrior::standard()
            }
        };
        Ok(Box::new(GaussianScore {
            prior,
            schedule: self.schedule,
        }))
    }

    pub fn llm(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Box<dyn LlmProvider>> {
        match self.llm.provider {
            LlmKind::Fixture => {
                let path = self
                    .llm
                    .fixture
                    .as_deref()
                    .ok_or_else(|| Error::invalid("fixture LLM selected but no fixture file given"))?;
                Ok(Box::new(FixtureLlm::load(path)?))
            }
            LlmKind::Remote => Ok(Box::new(RemoteLlm::new(
                &self.llm.base_url,
                &self.llm.model,
                env(RemoteLlm::API_KEY_ENV),
                Duration::from_secs(self.llm.timeout_secs),
                self.llm.max_retries,
            )?)),
        }
    }

    pub fn embedder(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Box<dyn EmbeddingProvider>> {
        match self.embedding.provider {
            EmbedKind::Stub => Ok(Box::new(StubEmbedder::new(self.embedding.dim))),
            EmbedKind::Table => {
                let path = self
                    .embedding
                    .table
                    .as_deref()
                    .ok_or_else(|| Error::invalid("table embedder selected but no table file given"))?;
                Ok(Box::new(TableEmbedder::load(path)?))
            }
            EmbedKind::Remote => Ok(Box::new(RemoteEmbedder::new(
                &self.embedding.base_url,
                &self.embedding.model,
                self.embedding.dim,
                env(RemoteEmbedder::API_KEY_ENV),
                self.embedding.max_retries,
            )?)),
        }
    }
}

/// Environment lookup backed by the process environment.
pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}
