//! Length-aware text similarity, naive and agent-assisted retrieval, and the
//! full → half → fine level policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{decompose_fine, decompose_half, select_candidate, AgentConfig, LlmProvider, PromptSet};
use crate::corpus::{embed_text, EmbeddingProvider, EmbeddingVector, MotionDatabase};
use crate::error::{Error, Result};
use crate::motion::{Level, Part};
use crate::util::{bounded_map, stage_seed};

/// Which score stands for a part in the level decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// Best score among the k candidates.
    #[default]
    MaxOverK,
    /// Score of the candidate the agent picked.
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub lambda: f64,
    pub tau_full: f64,
    pub tau_half: f64,
    pub k: usize,
    pub score_rule: ScoreRule,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            lambda: 0.05,
            tau_full: 0.96,
            tau_half: 0.96,
            k: 5,
            score_rule: ScoreRule::MaxOverK,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        for (name, t) in [("tau_full", self.tau_full), ("tau_half", self.tau_half)] {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("{name} must lie in [-1, 1], got {t}")));
            }
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

/// `cos · exp(−λ·|l_i − l_p| / max(l_i, l_p))`, with the cosine clamped to
/// [−1, 1] against rounding.
pub fn score_from_cosine(cosine: f64, l_i: usize, l_p: usize, lambda: f64) -> f64 {
    let cos = cosine.clamp(-1.0, 1.0);
    let (a, b) = (l_i as f64, l_p as f64);
    let longest = a.max(b);
    let gamma = if longest > 0.0 { (a - b).abs() / longest } else { 0.0 };
    cos * (-lambda * gamma).exp()
}

pub fn similarity_score(f_i: &EmbeddingVector, f_p: &EmbeddingVector, l_i: usize, l_p: usize, lambda: f64) -> Result<f64> {
    if l_i == 0 || l_p == 0 {
        return Err(Error::invalid("motion lengths must be at least 1 frame"));
    }
    Ok(score_from_cosine(f_i.dot(f_p)?, l_i, l_p, lambda))
}

/// One retrieved database description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub entry_id: String,
    pub description_key: String,
    pub score: f64,
}

/// Best-scoring entry for `part` descriptions. Ties go to the smallest id.
pub fn naive_retrieve(db: &MotionDatabase, query: &EmbeddingVector, l_p: usize, part: Part, lambda: f64) -> Result<Hit> {
    if db.is_empty() {
        return Err(Error::invalid("cannot retrieve from an empty database"));
    }
    let key = part.key();
    let mut best: Option<(&str, f64)> = None;
    for e in &db.entries {
        let Some(f_i) = e.embeddings.get(key) else { continue };
        let s = similarity_score(f_i, query, e.length, l_p, lambda)?;
        let better = match best {
            None => true,
            Some((id, b)) => s > b || (s == b && e.id.as_str() < id),
        };
        if better {
            best = Some((&e.id, s));
        }
    }
    let (id, score) = best.ok_or_else(|| Error::invalid(format!("no database entry has an embedded {key} description")))?;
    Ok(Hit {
        entry_id: id.to_string(),
        description_key: key.to_string(),
        score,
    })
}

/// Providers and agent settings shared by one retrieval run.
#[derive(Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub llm: &'a dyn LlmProvider,
    pub embedder: &'a dyn EmbeddingProvider,
    pub prompts: &'a PromptSet,
    pub agent: AgentConfig,
    pub seed: u64,
}

/// Outcome for one part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSelection {
    pub entry_id: String,
    pub description_key: String,
    /// The score used by the level decision (see [`ScoreRule`]).
    pub score: f64,
    /// Best candidate score over the k descriptions.
    pub max_score: f64,
    /// Score of the chosen entry.
    pub selected_score: f64,
    pub agent_fallback: bool,
    /// Distinct candidate entries in first-seen order.
    pub candidates: Vec<Hit>,
}

/// Retrieve each of the part descriptions, pool the distinct hits and let
/// the selection agent choose among them.
pub fn retrieve_part_with_agent(
    db: &MotionDatabase,
    part: Part,
    original_prompt: &str,
    descriptions: &[String],
    l_p: usize,
    cfg: &RetrievalConfig,
    ctx: &RetrievalContext<'_>,
) -> Result<PartSelection> {
    if descriptions.is_empty() {
        return Err(Error::invalid(format!("no {part} descriptions to retrieve")));
    }
    let mut embedded: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    for d in descriptions {
        if !embedded.contains_key(d.as_str()) {
            embedded.insert(d, embed_text(ctx.embedder, d, ctx.agent.max_retries)?);
        }
    }
    let mut candidates: Vec<Hit> = Vec::new();
    for d in descriptions {
        let hit = naive_retrieve(db, &embedded[d.as_str()], l_p, part, cfg.lambda)?;
        match candidates.iter_mut().find(|c| c.entry_id == hit.entry_id) {
            Some(c) => c.score = c.score.max(hit.score),
            None => candidates.push(hit),
        }
    }
    let scored: Vec<(String, f64)> = candidates
        .iter()
        .map(|c| {
            let text = db
                .get(&c.entry_id)
                .and_then(|e| e.description(part))
                .unwrap_or_default()
                .to_string();
            (text, c.score)
        })
        .collect();
    let seed = stage_seed(ctx.seed, &format!("select:{}", part.key()));
    let choice = select_candidate(ctx.llm, ctx.prompts, part, original_prompt, &scored, &ctx.agent, seed)?;
    let max_score = candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    let chosen = &candidates[choice.index];
    let selected_score = chosen.score;
    Ok(PartSelection {
        entry_id: chosen.entry_id.clone(),
        description_key: chosen.description_key.clone(),
        score: match cfg.score_rule {
            ScoreRule::MaxOverK => max_score,
            ScoreRule::Selected => selected_score,
        },
        max_score,
        selected_score,
        agent_fallback: choice.fallback,
        candidates,
    })
}

/// Level decision: full if `s_full ≥ τ_full`, else half if the mean of the
/// half scores is `≥ τ_half`, else fine. Half scores are only consulted when
/// the full level fails, so they may be absent when it passes.
pub fn choose_level(s_full: f64, half: Option<(f64, f64)>, cfg: &RetrievalConfig) -> Level {
    if s_full >= cfg.tau_full {
        return Level::Full;
    }
    match half {
        Some((u, l)) if (u + l) / 2.0 >= cfg.tau_half => Level::Half,
        _ => Level::Fine,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub prompt: String,
    pub length: usize,
    pub embedding: EmbeddingVector,
}

impl Query {
    pub fn embed(prompt: &str, length: usize, embedder: &dyn EmbeddingProvider, max_retries: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::invalid("target length must be at least 1 frame"));
        }
        if prompt.trim().is_empty() {
            return Err(Error::invalid("prompt must not be empty"));
        }
        Ok(Query {
            prompt: prompt.to_string(),
            length,
            embedding: embed_text(embedder, prompt, max_retries)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecidedScores {
    pub s_full: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s_half_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub level: Level,
    pub selections: BTreeMap<Part, PartSelection>,
    pub decided_scores: DecidedScores,
}

impl RetrievalPlan {
    pub fn validate(&self) -> Result<()> {
        let want: Vec<Part> = self.level.parts().to_vec();
        let have: Vec<Part> = self.selections.keys().copied().collect();
        let mut want_sorted = want.clone();
        want_sorted.sort();
        if have != want_sorted {
            return Err(Error::Invariant(format!("{} plan has parts {have:?}", self.level)));
        }
        for (p, s) in &self.selections {
            if !(-1.0..=1.0).contains(&s.score) {
                return Err(Error::Invariant(format!("{p} score {} outside [-1, 1]", s.score)));
            }
        }
        Ok(())
    }
}

/// Draw k samples of a decomposition stage, tolerating individual failures.
fn sample_k<T: Send>(k: usize, seed: u64, limit: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let seeds: Vec<u64> = (0..k as u64).map(|i| seed.wrapping_add(i)).collect();
    let results = bounded_map(&seeds, limit, |_, &s| f(s));
    let mut out = Vec::new();
    let mut causes = Vec::new();
    for (s, r) in seeds.iter().zip(results) {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                log::warn!("decomposition sample with seed {s} dropped: {e}");
                causes.push(format!("seed {s}: {e}"));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::DecompositionExhausted { attempts: k, causes });
    }
    Ok(out)
}

fn retrieve_level(
    db: &MotionDatabase,
    query: &Query,
    parts: &[Part],
    texts: &BTreeMap<Part, Vec<String>>,
    cfg: &RetrievalConfig,
    ctx: &RetrievalContext<'_>,
) -> Result<BTreeMap<Part, PartSelection>> {
    let results = bounded_map(parts, ctx.agent.max_in_flight, |_, &p| {
        retrieve_part_with_agent(db, p, &query.prompt, &texts[&p], query.length, cfg, ctx)
    });
    parts.iter().copied().zip(results).map(|(p, r)| r.map(|s| (p, s))).collect()
}

/// Full-level retrieval first; decompositions are requested only when a
/// coarser level fails its threshold.
pub fn hierarchical_retrieve(
    db: &MotionDatabase,
    query: &Query,
    cfg: &RetrievalConfig,
    ctx: &RetrievalContext<'_>,
) -> Result<RetrievalPlan> {
    cfg.validate()?;
    ctx.agent.validate()?;
    if query.length == 0 {
        return Err(Error::invalid("target length must be at least 1 frame"));
    }
    let full_hit = naive_retrieve(db, &query.embedding, query.length, Part::Full, cfg.lambda)?;
    let s_full = full_hit.score;
    if choose_level(s_full, None, cfg) == Level::Full {
        let sel = PartSelection {
            entry_id: full_hit.entry_id.clone(),
            description_key: full_hit.description_key.clone(),
            score: s_full,
            max_score: s_full,
            selected_score: s_full,
            agent_fallback: false,
            candidates: vec![full_hit],
        };
        return Ok(RetrievalPlan {
            level: Level::Full,
            selections: BTreeMap::from([(Part::Full, sel)]),
            decided_scores: DecidedScores {
                s_full,
                s_half_mean: None,
            },
        });
    }

    let limit = ctx.agent.max_in_flight;
    let half_sets = sample_k(cfg.k, stage_seed(ctx.seed, "decompose:half"), limit, |s| {
        decompose_half(ctx.llm, ctx.prompts, &query.prompt, &ctx.agent, s)
    })?;
    let mut texts = BTreeMap::new();
    texts.insert(Part::Upper, half_sets.iter().map(|h| h.upper.clone()).collect());
    texts.insert(Part::Lower, half_sets.iter().map(|h| h.lower.clone()).collect());
    let half = retrieve_level(db, query, Level::Half.parts(), &texts, cfg, ctx)?;
    let mean = (half[&Part::Upper].score + half[&Part::Lower].score) / 2.0;
    let level = choose_level(s_full, Some((half[&Part::Upper].score, half[&Part::Lower].score)), cfg);
    let decided_scores = DecidedScores {
        s_full,
        s_half_mean: Some(mean),
    };
    if level == Level::Half {
        return Ok(RetrievalPlan {
            level,
            selections: half,
            decided_scores,
        });
    }

    let fine_sets = sample_k(cfg.k, stage_seed(ctx.seed, "decompose:fine"), limit, |s| {
        decompose_fine(ctx.llm, ctx.prompts, &query.prompt, &ctx.agent, s)
    })?;
    let mut texts = BTreeMap::new();
    for &p in &Part::FINE {
        let list = fine_sets
            .iter()
            .map(|f| match p {
                Part::Head => f.head.clone(),
                Part::Torso => f.torso.clone(),
                Part::LeftArm => f.left_arm.clone(),
                Part::RightArm => f.right_arm.clone(),
                Part::LowerBody => f.lower_body.clone(),
                _ => f.trajectory.clone(),
            })
            .collect();
        texts.insert(p, list);
    }
    let fine = retrieve_level(db, query, &Part::FINE, &texts, cfg, ctx)?;
    Ok(RetrievalPlan {
        level: Level::Fine,
        selections: fine,
        decided_scores,
    })
}
