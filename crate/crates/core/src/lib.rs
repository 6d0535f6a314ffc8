//! Training-free text-to-motion by retrieval and recomposition.
//!
//! A prompt is matched against a motion database at full-body level; when no
//! entry matches well enough, an LLM decomposes the prompt into half-body or
//! fine-grained part descriptions, each part is retrieved independently, and
//! the retrieved clips are stitched into one guide motion. The guide is then
//! refined with an SDEdit pass through a pluggable score model.
//!
//! Module map:
//!
//! - [`motion`]: quaternions, clips, forward kinematics, part composition and
//!   the 263-wide pose feature representation
//! - [`corpus`]: database ingestion, embedding providers and the JSONL index
//! - [`agents`]: LLM decomposition and candidate-selection agents
//! - [`retrieval`]: length-aware similarity and the full/half/fine policy
//! - [`diffusion`]: noise schedule, reverse steps and SDEdit
//! - [`metrics`]: R-precision, FID, MM distance, diversity, multimodality
//! - [`config`]: engine configuration with layered precedence

pub mod agents;
pub mod config;
pub mod corpus;
pub mod diffusion;
mod error;
mod http;
pub mod metrics;
pub mod motion;
pub mod retrieval;
pub mod synthetic;
pub mod util;

pub use error::{Error, ErrorKind, ProviderError, Result};
