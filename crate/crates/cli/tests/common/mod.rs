//! Fixture corpus shared by the CLI tests: twenty synthetic motions, canned
//! LLM replies, a hand-built embedding table and a Gaussian score model.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rmd_core::agents::{FixtureLlm, PromptSet};
use rmd_core::corpus::{Annotation, TableEmbedder};
use rmd_core::motion::{write_motion, Part, SkeletonDef};
use rmd_core::synthetic::Synth;
use tempfile::TempDir;

pub const N: usize = 20;
pub const DIM: usize = 9 * N + 12;
const SPARE: usize = DIM - 1;

pub const FULL_PROMPT: &str = "a person walks forward steadily";
pub const HALF_PROMPT: &str = "a person waves while stepping sideways";
pub const FINE_PROMPT: &str = "a person nods, squats and circles around";
pub const QUERY_LENGTH: usize = 40;

/// Entries read by the half scenario (upper, lower) and the fine scenario
/// (head, torso, left arm, right arm, lower body, trajectory).
pub const HALF_SOURCES: [usize; 2] = [5, 7];
pub const FINE_SOURCES: [usize; 6] = [8, 9, 10, 11, 12, 13];

pub fn entry_length(i: usize) -> usize {
    40 + 4 * (i % 5)
}

pub fn synth(i: usize) -> Synth {
    let f = i as f64;
    match i % 8 {
        0 => Synth::Walk { speed: 1.0 + 0.05 * f, heading: 0.1 * f },
        1 => Synth::TurningWalk { speed: 0.9, turn_rate: 0.3 + 0.05 * f },
        2 => Synth::Static { lean: 0.02 * f },
        3 => Synth::ArmWave { right: i % 2 == 1, amplitude: 0.4 + 0.02 * f },
        4 => Synth::SideJump { distance: 0.3 + 0.02 * f },
        5 => Synth::Circle { radius: 1.0, counterclockwise: i.is_multiple_of(2) },
        6 => Synth::Nod { amplitude: 0.2 },
        _ => Synth::Squat { depth: 0.3 },
    }
}

pub fn texts(i: usize) -> Vec<String> {
    let mut t = vec![format!("motion number {i}"), format!("clip {i} of the fixture corpus")];
    if i == 0 {
        t.push("the first clip".into());
    }
    t
}

pub fn id(i: usize) -> String {
    format!("m{i:02}")
}

fn part_index(part: Part) -> usize {
    Part::ALL.iter().position(|&p| p == part).unwrap()
}

fn basis(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

fn toward(i: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = c;
    v[SPARE] = (1.0 - c * c).sqrt();
    v
}

fn axis(entry: usize, part: Part) -> usize {
    9 * entry + part_index(part)
}

fn fine_reply(lines: [&str; 7]) -> String {
    lines.join("\n")
}

fn entry_fine_lines(i: usize) -> [String; 7] {
    ["head", "spine", "left arm", "right arm", "left leg", "right leg", "path"].map(|p| format!("entry {i} {p}"))
}

pub struct Fixture {
    pub dir: TempDir,
    pub config: PathBuf,
    pub motions: PathBuf,
    pub annotations: PathBuf,
    pub index: PathBuf,
    pub llm: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Write corpus, fixtures and config; the index is not built yet.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let motions = root.join("motions");
    std::fs::create_dir_all(&motions).unwrap();
    let sk = SkeletonDef::smpl22();
    let prompts = PromptSet::default();
    let mut llm = FixtureLlm::new();
    let mut table = TableEmbedder::new("fixture-table", DIM);
    let mut lines = String::new();

    for i in 0..N {
        let name = format!("{}.json", id(i));
        let clip = synth(i).generate(entry_length(i), 20.0).unwrap();
        write_motion(&motions.join(&name), &clip, &sk).unwrap();
        let a = Annotation {
            id: id(i),
            motion: name,
            texts: texts(i),
        };
        lines.push_str(&serde_json::to_string(&a).unwrap());
        lines.push('\n');

        let input = texts(i).join("\n");
        let upper = format!("entry {i} upper motion");
        let lower = format!("entry {i} lower motion");
        llm.insert(&prompts.render_half(&input), None, format!("{upper}\n{lower}"));
        let fine = entry_fine_lines(i);
        llm.insert(&prompts.render_fine(&input), None, fine.join("\n"));

        table.insert(texts(i)[0].clone(), basis(axis(i, Part::Full))).unwrap();
        table.insert(upper, basis(axis(i, Part::Upper))).unwrap();
        table.insert(lower, basis(axis(i, Part::Lower))).unwrap();
        let fine_texts = [
            (Part::Head, fine[0].clone()),
            (Part::Torso, fine[1].clone()),
            (Part::LeftArm, fine[2].clone()),
            (Part::RightArm, fine[3].clone()),
            (Part::LowerBody, format!("{}; {}", fine[4], fine[5])),
            (Part::Trajectory, fine[6].clone()),
        ];
        for (part, text) in fine_texts {
            table.insert(text, basis(axis(i, part))).unwrap();
        }
    }
    let annotations = root.join("annotations.jsonl");
    std::fs::write(&annotations, lines).unwrap();

    // full scenario: the prompt sits right next to entry 0
    table.insert(FULL_PROMPT, toward(axis(0, Part::Full), 0.99)).unwrap();

    // half scenario: upper and lower come from two different entries
    table.insert(HALF_PROMPT, toward(axis(3, Part::Full), 0.5)).unwrap();
    llm.insert(&prompts.render_half(HALF_PROMPT), None, "waves the right arm\nsteps to the side");
    table.insert("waves the right arm", toward(axis(HALF_SOURCES[0], Part::Upper), 0.99)).unwrap();
    table.insert("steps to the side", toward(axis(HALF_SOURCES[1], Part::Lower), 0.98)).unwrap();

    // fine scenario: half mean stays below the threshold
    table.insert(FINE_PROMPT, toward(axis(2, Part::Full), 0.5)).unwrap();
    llm.insert(&prompts.render_half(FINE_PROMPT), None, "moves the arms\nmoves the legs");
    table.insert("moves the arms", toward(axis(4, Part::Upper), 0.9)).unwrap();
    table.insert("moves the legs", toward(axis(6, Part::Lower), 0.9)).unwrap();
    let fine = [
        "nods the head",
        "bends the spine",
        "left arm swings",
        "right arm swings",
        "left knee bends",
        "right knee bends",
        "walks in a circle",
    ];
    llm.insert(&prompts.render_fine(FINE_PROMPT), None, fine_reply(fine));
    let fine_parts = [
        (Part::Head, fine[0].to_string()),
        (Part::Torso, fine[1].to_string()),
        (Part::LeftArm, fine[2].to_string()),
        (Part::RightArm, fine[3].to_string()),
        (Part::LowerBody, format!("{}; {}", fine[4], fine[5])),
        (Part::Trajectory, fine[6].to_string()),
    ];
    for ((part, text), src) in fine_parts.into_iter().zip(FINE_SOURCES) {
        table.insert(text, toward(axis(src, part), 0.95)).unwrap();
    }

    let llm_path = root.join("llm.json");
    llm.save(&llm_path).unwrap();
    table.save(&root.join("table.json")).unwrap();
    std::fs::write(root.join("score.json"), r#"{"kind":"gaussian","mean":[0.0],"var":[1.0]}"#).unwrap();
    let config = root.join("config.json");
    let cfg = serde_json::json!({
        "paths": {"index": "index.jsonl", "score_model": "score.json"},
        "llm": {"provider": "fixture", "fixture": "llm.json"},
        "embedding": {"provider": "table", "table": "table.json", "dim": DIM},
        "sdedit": {"t0": 0.5, "steps": 20},
        "seed": 7
    });
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    Fixture {
        index: root.join("index.jsonl"),
        dir,
        config,
        motions,
        annotations,
        llm: llm_path,
    }
}

pub fn rmd(fx: &Fixture, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rmd"));
    cmd.arg("--config").arg(&fx.config).args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("RMD_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().unwrap()
}

pub fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn build_index(fx: &Fixture) -> serde_json::Value {
    let out = rmd(
        fx,
        &[
            "db",
            "build",
            "--motions",
            path_arg(&fx.motions),
            "--annotations",
            path_arg(&fx.annotations),
            "--out",
            path_arg(&fx.index),
        ],
    );
    assert!(out.status.success(), "db build failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "command failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}
