//! LLM agents: prompt decomposition into body-part descriptions and
//! selection among retrieved candidates.
//!
//! Replies are validated by shape only. A reply with the wrong number of
//! lines is re-requested with the identical prompt up to `max_retries`
//! times; the prompt is never rewritten.

mod prompts;
mod provider;

use serde::{Deserialize, Serialize};

pub use prompts::{PromptSet, SLOT_CANDIDATES, SLOT_DESCRIPTION, SLOT_ORIGINAL, SLOT_PART};
pub use provider::{fixture_key, FixtureLlm, LlmProvider, RecordedCall, RecordingLlm, RemoteLlm};

use crate::error::{Error, Result};
use crate::motion::Part;
use crate::util::bounded_map;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalfSet {
    pub upper: String,
    pub lower: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineSet {
    pub head: String,
    pub torso: String,
    pub left_arm: String,
    pub right_arm: String,
    pub lower_body: String,
    pub trajectory: String,
}

/// Half-body and fine-grained descriptions of one motion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionSet {
    pub half: HalfSet,
    pub fine: FineSet,
}

impl DecompositionSet {
    /// Description of a half or fine part; `None` for [`Part::Full`].
    pub fn text(&self, part: Part) -> Option<&str> {
        Some(match part {
            Part::Full => return None,
            Part::Upper => &self.half.upper,
            Part::Lower => &self.half.lower,
            Part::Head => &self.fine.head,
            Part::Torso => &self.fine.torso,
            Part::LeftArm => &self.fine.left_arm,
            Part::RightArm => &self.fine.right_arm,
            Part::LowerBody => &self.fine.lower_body,
            Part::Trajectory => &self.fine.trajectory,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for part in Part::ALL.into_iter().skip(1) {
            if self.text(part).is_none_or(|t| t.trim().is_empty()) {
                return Err(Error::invalid(format!("decomposition has empty {part}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Decomposition samples drawn per query.
    pub k: usize,
    pub temperature: f64,
    pub max_retries: usize,
    pub max_in_flight: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            k: 5,
            temperature: 0.7,
            max_retries: 2,
            max_in_flight: 4,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("agent k must be at least 1"));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::invalid("agent temperature must be non-negative"));
        }
        Ok(())
    }
}

const KNOWN_LABELS: &[&str] = &[
    "upper body",
    "lower body",
    "upper",
    "lower",
    "head",
    "spine",
    "torso",
    "left upper limb",
    "right upper limb",
    "left lower limb",
    "right lower limb",
    "left arm",
    "right arm",
    "left leg",
    "right leg",
    "trajectory",
    "overall displacement/orientation(trajectory)",
    "overall displacement/orientation (trajectory)",
    "overall displacement/orientation",
    "displacement/orientation",
    "overall displacement",
];

fn strip_label(line: &str) -> &str {
    if let Some((prefix, rest)) = line.split_once(':') {
        let p = prefix.trim().trim_matches('*').trim().to_lowercase();
        let p = p.strip_suffix(" motion").unwrap_or(&p);
        if KNOWN_LABELS.contains(&p) {
            return rest.trim();
        }
    }
    line
}

fn strip_enumerator(line: &str) -> &str {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

/// Non-empty reply lines with enumerators and part labels removed.
pub fn reply_lines(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| strip_label(strip_enumerator(l)).trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn parse_half(reply: &str) -> std::result::Result<HalfSet, String> {
    let lines = reply_lines(reply);
    match <[String; 2]>::try_from(lines) {
        Ok([upper, lower]) => Ok(HalfSet { upper, lower }),
        Err(lines) => Err(format!("expected 2 lines, got {}", lines.len())),
    }
}

/// Seven lines in order head, spine, left upper limb, right upper limb, left
/// lower limb, right lower limb, trajectory. The two lower-limb lines are
/// joined with `"; "` into the single lower-body description.
pub fn parse_fine(reply: &str) -> std::result::Result<FineSet, String> {
    let lines = reply_lines(reply);
    match <[String; 7]>::try_from(lines) {
        Ok([head, torso, left_arm, right_arm, left_leg, right_leg, trajectory]) => Ok(FineSet {
            head,
            torso,
            left_arm,
            right_arm,
            lower_body: format!("{left_leg}; {right_leg}"),
            trajectory,
        }),
        Err(lines) => Err(format!("expected 7 lines, got {}", lines.len())),
    }
}

fn ask_until<T>(
    provider: &dyn LlmProvider,
    prompt: &str,
    temperature: f64,
    seed: u64,
    max_retries: usize,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<T> {
    let mut last = (String::new(), String::new());
    for attempt in 0..=max_retries {
        let reply = provider
            .complete(prompt, temperature, seed)
            .map_err(|e| Error::provider("llm completion", e))?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(reason) => {
                log::debug!("malformed agent reply (attempt {}): {reason}", attempt + 1);
                last = (reason, reply);
            }
        }
    }
    Err(Error::Decomposition {
        reason: format!("{} after {} attempts", last.0, max_retries + 1),
        raw: last.1,
    })
}

pub fn decompose_half(
    provider: &dyn LlmProvider,
    prompts: &PromptSet,
    text: &str,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<HalfSet> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot decompose an empty description"));
    }
    ask_until(provider, &prompts.render_half(text), cfg.temperature, seed, cfg.max_retries, parse_half)
}

pub fn decompose_fine(
    provider: &dyn LlmProvider,
    prompts: &PromptSet,
    text: &str,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<FineSet> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot decompose an empty description"));
    }
    ask_until(provider, &prompts.render_fine(text), cfg.temperature, seed, cfg.max_retries, parse_fine)
}

/// Both granularities for one sample.
pub fn decompose(
    provider: &dyn LlmProvider,
    prompts: &PromptSet,
    text: &str,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<DecompositionSet> {
    Ok(DecompositionSet {
        half: decompose_half(provider, prompts, text, cfg, seed)?,
        fine: decompose_fine(provider, prompts, text, cfg, seed)?,
    })
}

/// `cfg.k` independent samples with seed hints `seed, seed + 1, ...`.
/// Failed samples are dropped with a warning; the call fails only when none
/// survive. Output keeps seed order.
pub fn decompose_k(
    provider: &dyn LlmProvider,
    prompts: &PromptSet,
    text: &str,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<Vec<DecompositionSet>> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.k as u64).map(|i| seed.wrapping_add(i)).collect();
    let results = bounded_map(&seeds, cfg.max_in_flight, |_, &s| decompose(provider, prompts, text, cfg, s));
    let mut sets = Vec::with_capacity(cfg.k);
    let mut causes = Vec::new();
    for (s, r) in seeds.iter().zip(results) {
        match r {
            Ok(set) => sets.push(set),
            Err(e) => {
                log::warn!("decomposition sample with seed {s} dropped: {e}");
                causes.push(format!("seed {s}: {e}"));
            }
        }
    }
    if sets.is_empty() {
        return Err(Error::DecompositionExhausted {
            attempts: cfg.k,
            causes,
        });
    }
    Ok(sets)
}

/// Outcome of a candidate-selection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// 0-based candidate index.
    pub index: usize,
    /// True when the LLM answer was unusable and the best-scoring candidate
    /// was taken instead.
    pub fallback: bool,
}

fn parse_index(reply: &str, n: usize) -> std::result::Result<usize, String> {
    let last = reply
        .lines()
        .map(str::trim)
        .rev()
        .find(|l| !l.is_empty())
        .ok_or("empty reply")?;
    let token = last.trim_end_matches('.').trim();
    let idx: usize = token.parse().map_err(|_| format!("last line {last:?} is not an index"))?;
    if idx == 0 || idx > n {
        return Err(format!("index {idx} outside 1..={n}"));
    }
    Ok(idx - 1)
}

/// Ask the LLM which candidate description best matches `original` for
/// `part`. A single candidate is returned without a provider call.
pub fn select_candidate(
    provider: &dyn LlmProvider,
    prompts: &PromptSet,
    part: Part,
    original: &str,
    candidates: &[(String, f64)],
    cfg: &AgentConfig,
    seed: u64,
) -> Result<Selection> {
    match candidates.len() {
        0 => return Err(Error::invalid("select_candidate needs at least one candidate")),
        1 => {
            return Ok(Selection {
                index: 0,
                fallback: false,
            })
        }
        _ => {}
    }
    let texts: Vec<&str> = candidates.iter().map(|(t, _)| t.as_str()).collect();
    let prompt = prompts.render_selection(part.display_name(), original, &texts);
    match ask_until(provider, &prompt, 0.0, seed, cfg.max_retries, |r| parse_index(r, candidates.len())) {
        Ok(index) => Ok(Selection { index, fallback: false }),
        Err(Error::Decomposition { reason, .. }) => {
            log::warn!("retrieval agent reply unusable for {part} ({reason}); using best-scoring candidate");
            let index = candidates
                .iter()
                .enumerate()
                .fold(0, |best, (i, c)| if c.1 > candidates[best].1 { i } else { best });
            Ok(Selection { index, fallback: true })
        }
        Err(e) => Err(e),
    }
}
