use std::path::Path;

use crate::error::{Error, Result};

const HALF_BODY: &str = include_str!("../../data/prompts/half_body_v1.txt");
const FINE_GRAINED: &str = include_str!("../../data/prompts/fine_grained_v1.txt");
const RETRIEVAL_AGENT: &str = include_str!("../../data/prompts/retrieval_agent_v1.txt");

pub const SLOT_DESCRIPTION: &str = "[description]";
pub const SLOT_CANDIDATES: &str = "[retrieved motion prompts]";
pub const SLOT_PART: &str = "[part]";
pub const SLOT_ORIGINAL: &str = "[original motion prompt]";

/// The three agent prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub half_body: String,
    pub fine_grained: String,
    pub retrieval_agent: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            half_body: strip_final_newline(HALF_BODY),
            fine_grained: strip_final_newline(FINE_GRAINED),
            retrieval_agent: strip_final_newline(RETRIEVAL_AGENT),
        }
    }
}

fn strip_final_newline(s: &str) -> String {
    s.strip_suffix('\n').unwrap_or(s).to_string()
}

impl PromptSet {
    /// Load `half_body_v1.txt`, `fine_grained_v1.txt` and
    /// `retrieval_agent_v1.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str, slots: &[&str]| -> Result<String> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for slot in slots {
                if !text.contains(slot) {
                    return Err(Error::parse(&path, None, format!("template lacks slot {slot}")));
                }
            }
            Ok(strip_final_newline(&text))
        };
        Ok(PromptSet {
            half_body: read("half_body_v1.txt", &[SLOT_DESCRIPTION])?,
            fine_grained: read("fine_grained_v1.txt", &[SLOT_DESCRIPTION])?,
            retrieval_agent: read("retrieval_agent_v1.txt", &[SLOT_CANDIDATES, SLOT_PART, SLOT_ORIGINAL])?,
        })
    }

    pub fn render_half(&self, description: &str) -> String {
        self.half_body.replace(SLOT_DESCRIPTION, description)
    }

    pub fn render_fine(&self, description: &str) -> String {
        self.fine_grained.replace(SLOT_DESCRIPTION, description)
    }

    /// Candidates are listed one per line as `1. text`, `2. text`, ...
    pub fn render_selection(&self, part_name: &str, original: &str, candidates: &[&str]) -> String {
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.retrieval_agent
            .replace(SLOT_PART, part_name)
            .replace(SLOT_CANDIDATES, &listing)
            .replace(SLOT_ORIGINAL, original)
    }
}
