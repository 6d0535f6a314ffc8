use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rmd_core::agents::{decompose_fine, decompose_half, LlmProvider, RecordingLlm};
use rmd_core::config::{process_env, EngineConfig};
use rmd_core::corpus::{
    decompose_all, embed_all, ingest_corpus, load_index, reuse_cached, save_index, BuildConfig, CountingEmbedder,
    MotionDatabase,
};
use rmd_core::diffusion::{refine_features, SdeditConfig};
use rmd_core::metrics::{evaluate, FeatureSet};
use rmd_core::motion::{
    compose_parts, from_pose_features, read_features, to_pose_features, write_features, write_motion, MotionClip,
    Part, SkeletonDef,
};
use rmd_core::retrieval::{hierarchical_retrieve, Query, RetrievalContext, RetrievalPlan};
use rmd_core::util::stage_seed;
use rmd_core::Error;
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, DbCommand, Failure, StageExt};

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    let mut cfg = EngineConfig::resolve(cli.config.as_deref(), &process_env, &cli.overrides()).stage("config")?;
    cfg.sdedit.seed = stage_seed(cfg.seed, "sdedit");
    match &cli.command {
        Command::Db {
            action:
                DbCommand::Build {
                    motions,
                    annotations,
                    out,
                    cache,
                    no_cache,
                },
        } => {
            let mut check = cfg.clone();
            check.paths.index = None;
            check.validate().stage("config")?;
            let cache = if *no_cache { None } else { cache.clone().or_else(|| Some(out.clone())) };
            db_build(&cfg, motions, annotations, out, cache.as_deref())
        }
        command => {
            if matches!(command, Command::Decompose { .. } | Command::Eval { .. }) {
                let mut check = cfg.clone();
                check.paths.index = None;
                check.validate().stage("config")?;
            } else {
                cfg.validate().stage("config")?;
            }
            match command {
                Command::Decompose { text } => decompose(&cfg, text),
                Command::Retrieve { prompt, length, out } => retrieve(&cfg, prompt, *length, out.as_deref()),
                Command::Compose {
                    plan,
                    length,
                    out_motion,
                    out_features,
                } => compose(&cfg, plan, *length, out_motion, out_features.as_deref()),
                Command::Refine {
                    input,
                    out,
                    prompt,
                    no_normalize,
                } => refine(&cfg, input, out, prompt, *no_normalize),
                Command::Generate {
                    prompt,
                    length,
                    out_motion,
                    out_features,
                    sidecar,
                    dry_run,
                } => generate(
                    &cfg,
                    prompt,
                    *length,
                    out_motion.as_deref(),
                    out_features.as_deref(),
                    sidecar.as_deref(),
                    *dry_run,
                ),
                Command::Eval {
                    generated,
                    real,
                    repetitions,
                    out,
                } => eval(&cfg, generated, real.as_deref(), *repetitions, out.as_deref()),
                Command::Db { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> rmd_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> rmd_core::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: Some(e.line()),
        message: e.to_string(),
    })
}

#[derive(Debug, Serialize)]
struct BuildReport {
    entries: usize,
    reused_entries: usize,
    llm_calls: usize,
    embed_calls: usize,
    embedding_dim: usize,
    provider_tag: String,
    index: PathBuf,
}

fn db_build(cfg: &EngineConfig, motions: &Path, annotations: &Path, out: &Path, cache: Option<&Path>) -> CmdResult {
    let mut db = ingest_corpus(motions, annotations, &cfg.features).stage("ingest")?;
    let cached = cache.filter(|p| p.is_file()).and_then(|p| match load_index(p) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("ignoring cached index: {e}");
            None
        }
    });
    if let Some(c) = &cached {
        db = reuse_cached(db, c);
    }
    let reused_entries = db.entries.iter().filter(|e| e.decomposition.is_some()).count();

    let mut llm_calls = 0;
    if db.entries.iter().any(|e| e.decomposition.is_none()) {
        let prompts = cfg.prompts().stage("config")?;
        let llm = cfg.llm(&process_env).stage("config")?;
        let recorder = RecordingLlm::new(&*llm);
        db = decompose_all(db, &recorder, &prompts, &cfg.agent, 0).stage("decompose")?;
        llm_calls = recorder.calls().len();
    }
    let embedder = cfg.embedder(&process_env).stage("config")?;
    let counter = CountingEmbedder::new(&*embedder);
    db = embed_all(db, &counter, &BuildConfig::default()).stage("embed")?;
    save_index(&db, out).stage("save")?;
    print_json(&BuildReport {
        entries: db.len(),
        reused_entries,
        llm_calls,
        embed_calls: counter.calls(),
        embedding_dim: db.embedding_dim,
        provider_tag: db.provider_tag.clone(),
        index: out.to_path_buf(),
    });
    Ok(())
}

/// Up to `k` samples with seeds `base, base + 1, ...`; failed samples are
/// skipped.
fn samples<T>(k: usize, base: u64, f: impl Fn(u64) -> rmd_core::Result<T>) -> rmd_core::Result<Vec<T>> {
    let mut out = Vec::new();
    let mut causes = Vec::new();
    for i in 0..k as u64 {
        let s = base.wrapping_add(i);
        match f(s) {
            Ok(v) => out.push(v),
            Err(e) => {
                log::warn!("sample with seed {s} dropped: {e}");
                causes.push(format!("seed {s}: {e}"));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::DecompositionExhausted { attempts: k, causes });
    }
    Ok(out)
}

fn decompose(cfg: &EngineConfig, text: &str) -> CmdResult {
    let prompts = cfg.prompts().stage("config")?;
    let llm = cfg.llm(&process_env).stage("config")?;
    let k = cfg.retrieval.k;
    let half = samples(k, stage_seed(cfg.seed, "decompose:half"), |s| {
        decompose_half(&*llm, &prompts, text, &cfg.agent, s)
    })
    .stage("decompose")?;
    let fine = samples(k, stage_seed(cfg.seed, "decompose:fine"), |s| {
        decompose_fine(&*llm, &prompts, text, &cfg.agent, s)
    })
    .stage("decompose")?;
    print_json(&serde_json::json!({ "text": text, "half": half, "fine": fine }));
    Ok(())
}

fn plan_for(cfg: &EngineConfig, db: &MotionDatabase, prompt: &str, length: usize) -> CmdResult<RetrievalPlan> {
    let prompts = cfg.prompts().stage("config")?;
    let embedder = cfg.embedder(&process_env).stage("config")?;
    if embedder.tag() != db.provider_tag || embedder.dim() != db.embedding_dim {
        return Err(Error::InvalidArgument(format!(
            "index was embedded with {} (dim {}), configured embedder is {} (dim {})",
            db.provider_tag,
            db.embedding_dim,
            embedder.tag(),
            embedder.dim()
        )))
        .stage("retrieve");
    }
    let llm: Box<dyn LlmProvider> = cfg.llm(&process_env).stage("config")?;
    let query = Query::embed(prompt, length, &*embedder, cfg.agent.max_retries).stage("retrieve")?;
    let ctx = RetrievalContext {
        llm: &*llm,
        embedder: &*embedder,
        prompts: &prompts,
        agent: cfg.agent,
        seed: cfg.seed,
    };
    let plan = hierarchical_retrieve(db, &query, &cfg.retrieval, &ctx).stage("retrieve")?;
    plan.validate().stage("retrieve")?;
    Ok(plan)
}

fn retrieve(cfg: &EngineConfig, prompt: &str, length: usize, out: Option<&Path>) -> CmdResult {
    let db = cfg.database().stage("load-index")?;
    let plan = plan_for(cfg, &db, prompt, length)?;
    if let Some(p) = out {
        write_json(p, &plan).stage("write")?;
    }
    print_json(&plan);
    Ok(())
}

/// Guide motion for `plan`, with the skeleton it is expressed on.
fn compose_plan(
    cfg: &EngineConfig,
    db: &MotionDatabase,
    plan: &RetrievalPlan,
    length: usize,
) -> CmdResult<(MotionClip, SkeletonDef)> {
    let skeleton = cfg.skeleton().stage("config")?;
    let masks = cfg.masks(&skeleton).stage("config")?;
    let mut clips: BTreeMap<Part, MotionClip> = BTreeMap::new();
    for (part, sel) in &plan.selections {
        let (clip, sk) = db.load_motion(&sel.entry_id).stage("load-motion")?;
        if sk.joint_count() != skeleton.joint_count() {
            return Err(Error::InvalidArgument(format!(
                "motion {} has {} joints, skeleton has {}",
                sel.entry_id,
                sk.joint_count(),
                skeleton.joint_count()
            )))
            .stage("compose");
        }
        clips.insert(*part, clip);
    }
    let clip = compose_parts(&clips, plan.level, length, &masks).stage("compose")?;
    Ok((clip, skeleton))
}

/// Accepts a bare plan or any object with a `plan` field.
fn read_plan(path: &Path) -> rmd_core::Result<RetrievalPlan> {
    let value: serde_json::Value = read_json(path)?;
    let inner = value.get("plan").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: None,
        message: e.to_string(),
    })
}

fn compose(cfg: &EngineConfig, plan: &Path, length: usize, out_motion: &Path, out_features: Option<&Path>) -> CmdResult {
    let plan = read_plan(plan).stage("load-plan")?;
    plan.validate().stage("load-plan")?;
    let db = cfg.database().stage("load-index")?;
    let (clip, skeleton) = compose_plan(cfg, &db, &plan, length)?;
    write_motion(out_motion, &clip, &skeleton).stage("write")?;
    if let Some(p) = out_features {
        let feats = to_pose_features(&clip, &skeleton, &cfg.features).stage("features")?;
        write_features(p, &feats).stage("write")?;
    }
    Ok(())
}

fn refine(cfg: &EngineConfig, input: &Path, out: &Path, prompt: &str, no_normalize: bool) -> CmdResult {
    let x = read_features(input).stage("load-features")?;
    let stats = if no_normalize || cfg.paths.index.is_none() {
        None
    } else {
        cfg.database().stage("load-index")?.feature_stats
    };
    let model = cfg.score_model().stage("config")?;
    let y = refine_features(&x, stats.as_ref(), &cfg.sdedit, &cfg.schedule, &*model, prompt).stage("refine")?;
    write_features(out, &y).stage("write")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Seeds {
    master: u64,
    decompose_half: u64,
    decompose_fine: u64,
    select: BTreeMap<String, u64>,
    sdedit: u64,
}

impl Seeds {
    fn new(cfg: &EngineConfig, plan: &RetrievalPlan) -> Self {
        Seeds {
            master: cfg.seed,
            decompose_half: stage_seed(cfg.seed, "decompose:half"),
            decompose_fine: stage_seed(cfg.seed, "decompose:fine"),
            select: plan
                .selections
                .keys()
                .filter(|p| **p != Part::Full)
                .map(|p| (p.key().to_string(), stage_seed(cfg.seed, &format!("select:{}", p.key()))))
                .collect(),
            sdedit: cfg.sdedit.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    prompt: &'a str,
    length: usize,
    plan: &'a RetrievalPlan,
    seeds: Seeds,
    sdedit: SdeditConfig,
    normalized: bool,
}

fn default_sidecar(out_motion: &Path) -> PathBuf {
    let mut name = out_motion.file_stem().unwrap_or_default().to_os_string();
    name.push(".sidecar.json");
    out_motion.with_file_name(name)
}

fn generate(
    cfg: &EngineConfig,
    prompt: &str,
    length: usize,
    out_motion: Option<&Path>,
    out_features: Option<&Path>,
    sidecar: Option<&Path>,
    dry_run: bool,
) -> CmdResult {
    let db = cfg.database().stage("load-index")?;
    let plan = plan_for(cfg, &db, prompt, length)?;
    if dry_run {
        print_json(&serde_json::json!({
            "prompt": prompt,
            "length": length,
            "plan": plan,
            "seeds": Seeds::new(cfg, &plan),
        }));
        return Ok(());
    }
    let out_motion = out_motion
        .ok_or_else(|| Error::InvalidArgument("--out-motion is required".into()))
        .stage("config")?;
    let (guide, skeleton) = compose_plan(cfg, &db, &plan, length)?;
    let x_g = to_pose_features(&guide, &skeleton, &cfg.features).stage("features")?;
    let model = cfg.score_model().stage("config")?;
    let stats = db.feature_stats.as_ref();
    let refined =
        refine_features(&x_g, stats, &cfg.sdedit, &cfg.schedule, &*model, prompt).stage("refine")?;
    // with t0 = 0 the guide passes through untouched, root placement included
    let motion = if cfg.sdedit.t0 == 0.0 {
        guide
    } else {
        from_pose_features(&refined, &skeleton, guide.fps).stage("features")?
    };
    write_motion(out_motion, &motion, &skeleton).stage("write")?;
    if let Some(p) = out_features {
        write_features(p, &refined).stage("write")?;
    }
    let sidecar_path = sidecar.map(Path::to_path_buf).unwrap_or_else(|| default_sidecar(out_motion));
    let record = Sidecar {
        prompt,
        length,
        plan: &plan,
        seeds: Seeds::new(cfg, &plan),
        sdedit: cfg.sdedit,
        normalized: stats.is_some() && cfg.sdedit.t0 > 0.0,
    };
    write_json(&sidecar_path, &record).stage("write")?;
    print_json(&serde_json::json!({
        "level": plan.level,
        "motion": out_motion,
        "features": out_features,
        "sidecar": sidecar_path,
    }));
    Ok(())
}

fn eval(cfg: &EngineConfig, generated: &Path, real: Option<&Path>, repetitions: Option<usize>, out: Option<&Path>) -> CmdResult {
    let gen = FeatureSet::load(generated).stage("load-features")?;
    let real = real.map(FeatureSet::load).transpose().stage("load-features")?;
    let mut metrics = cfg.metrics;
    if let Some(r) = repetitions {
        metrics.repetitions = r;
    }
    let report = evaluate(&gen, real.as_ref(), &metrics, stage_seed(cfg.seed, "eval")).stage("eval")?;
    if let Some(p) = out {
        write_json(p, &report).stage("write")?;
    }
    print_json(&report);
    Ok(())
}
