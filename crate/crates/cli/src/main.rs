mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmd_core::config::Overrides;
use rmd_core::diffusion::SamplerMode;
use rmd_core::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "rmd", version, about = "Retrieval-augmented text-to-motion pipeline")]
pub struct Cli {
    /// Engine config file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; every stochastic stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    #[command(flatten)]
    pub engine: EngineFlags,

    #[command(subcommand)]
    pub command: Command,
}

/// Config overrides shared by every subcommand.
#[derive(Debug, Args, Default)]
pub struct EngineFlags {
    /// Motion database index (JSONL).
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Fixture LLM replies (JSON); selects the fixture provider.
    #[arg(long, global = true)]
    pub llm_fixture: Option<PathBuf>,
    /// Score model file (JSON).
    #[arg(long, global = true)]
    pub score_model: Option<PathBuf>,
    /// Diffusion start time in [0, 1].
    #[arg(long, global = true)]
    pub t0: Option<f64>,
    /// Reverse steps over [0, 1].
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Sampler: deterministic or stochastic_sde.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<SamplerMode>,
    /// Length penalty coefficient.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Decomposition samples per query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

fn parse_mode(s: &str) -> Result<SamplerMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Motion database maintenance.
    Db {
        #[command(subcommand)]
        action: DbCommand,
    },
    /// Decompose a description into half-body and fine-grained parts.
    Decompose {
        #[arg(long)]
        text: String,
    },
    /// Run hierarchical retrieval and print the plan.
    Retrieve {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stitch the clips named by a retrieval plan into one motion.
    Compose {
        /// Plan JSON as printed by `retrieve` (a `generate` sidecar also works).
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out_motion: PathBuf,
        #[arg(long)]
        out_features: Option<PathBuf>,
    },
    /// SDEdit refinement of a pose-feature file.
    Refine {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Text condition passed to the score model.
        #[arg(long, default_value = "")]
        prompt: String,
        /// Skip z-scoring with the index's feature statistics.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Prompt to motion: retrieve, compose, refine.
    Generate {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        length: usize,
        #[arg(long, required_unless_present = "dry_run")]
        out_motion: Option<PathBuf>,
        #[arg(long)]
        out_features: Option<PathBuf>,
        /// Plan and seed record; defaults to `<out-motion>.sidecar.json`.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Print the plan and stop before diffusion.
        #[arg(long)]
        dry_run: bool,
    },
    /// Metrics over feature files.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DbCommand {
    /// Ingest, decompose, embed and save an index.
    Build {
        #[arg(long)]
        motions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Previous index to reuse decompositions and embeddings from;
        /// defaults to `--out` when it exists.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Ignore any previous index.
        #[arg(long)]
        no_cache: bool,
    },
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        let e = &self.engine;
        Overrides {
            seed: self.seed,
            index: e.index.clone(),
            score_model: e.score_model.clone(),
            llm_fixture: e.llm_fixture.clone(),
            t0: e.t0,
            steps: e.steps,
            mode: e.mode,
            lambda: e.lambda,
            k: e.k,
        }
    }
}

/// A failed command: the pipeline stage and the underlying error.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: Error,
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> StageExt<T> for rmd_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Provider => 3,
        ErrorKind::Internal => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Input => "input",
        ErrorKind::Provider => "provider",
        ErrorKind::Internal => "internal",
    }
}

fn report(json: bool, stage: &str, kind: &str, code: u8, message: &str) {
    if json {
        let v = serde_json::json!({
            "error": { "stage": stage, "kind": kind, "exit_code": code, "message": message }
        });
        eprintln!("{v}");
    } else {
        eprintln!("error [{stage}]: {message}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let json_requested = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 || !json_requested {
                let _ = e.print();
            } else {
                report(true, "usage", "input", 2, e.to_string().trim());
            }
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = f.error.kind();
            let code = exit_code(kind);
            report(cli.json_errors, f.stage, kind_name(kind), code, &f.error.to_string());
            ExitCode::from(code)
        }
    }
}
