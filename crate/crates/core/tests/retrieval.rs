use std::collections::BTreeMap;

use proptest::prelude::*;
use rmd_core::agents::{AgentConfig, DecompositionSet, FineSet, FixtureLlm, HalfSet, PromptSet, RecordingLlm};
use rmd_core::corpus::{DatabaseEntry, EmbeddingVector, MotionDatabase, StubEmbedder, TableEmbedder};
use rmd_core::motion::{Level, Part};
use rmd_core::retrieval::{
    choose_level, hierarchical_retrieve, naive_retrieve, retrieve_part_with_agent, score_from_cosine,
    similarity_score, Query, RetrievalConfig, RetrievalContext, ScoreRule,
};

const DIM: usize = 64;
const SPARE: usize = DIM - 1;

fn basis(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

/// Unit vector with cosine `c` against basis vector `i`, orthogonal to
/// every other basis vector below `SPARE`.
fn toward(i: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i] = c;
    v[SPARE] = (1.0 - c * c).max(0.0).sqrt();
    v
}

fn ev(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::from_raw(v, "table").unwrap()
}

fn decomposition(tag: &str) -> DecompositionSet {
    DecompositionSet {
        half: HalfSet {
            upper: format!("{tag} upper"),
            lower: format!("{tag} lower"),
        },
        fine: FineSet {
            head: format!("{tag} head"),
            torso: format!("{tag} torso"),
            left_arm: format!("{tag} left arm"),
            right_arm: format!("{tag} right arm"),
            lower_body: format!("{tag} legs"),
            trajectory: format!("{tag} path"),
        },
    }
}

/// Entries `e0..e{n}`; description `part` of entry `i` embeds as basis
/// vector `9 * i + part index`.
fn database(n: usize, lengths: &[usize], table: &mut TableEmbedder) -> MotionDatabase {
    let mut db = MotionDatabase::empty("/tmp");
    db.embedding_dim = DIM;
    db.provider_tag = "table".into();
    for i in 0..n {
        let tag = format!("e{i}");
        let mut entry = DatabaseEntry {
            id: tag.clone(),
            motion_path: format!("{tag}.json"),
            length: lengths[i],
            fps: 20.0,
            texts_full: vec![format!("{tag} full")],
            decomposition: Some(decomposition(&tag)),
            embeddings: BTreeMap::new(),
        };
        for (p_idx, part) in Part::ALL.into_iter().enumerate() {
            let text = entry.description(part).unwrap().to_string();
            let v = basis(9 * i + p_idx);
            table.insert(text, v.clone()).unwrap();
            entry.embeddings.insert(part.key().to_string(), ev(&v));
        }
        db.entries.push(entry);
    }
    db.validate().unwrap();
    db
}

fn part_index(part: Part) -> usize {
    Part::ALL.iter().position(|&p| p == part).unwrap()
}

#[test]
fn worked_length_penalty() {
    let s = score_from_cosine(1.0, 60, 120, 0.05);
    assert!((s - (-0.025f64).exp()).abs() < 1e-15);
    assert!((s - 0.9753099).abs() < 1e-7);
}

#[test]
fn score_rejects_dimension_mismatch_and_zero_length() {
    let a = ev(&[1.0, 0.0]);
    let b = ev(&[1.0, 0.0, 0.0]);
    assert!(similarity_score(&a, &b, 10, 10, 0.05).is_err());
    assert!(similarity_score(&a, &a, 0, 10, 0.05).is_err());
    assert_eq!(similarity_score(&a, &a, 10, 10, 0.05).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn score_matches_formula(cos in -1.0f64..=1.0, li in 1usize..500, lp in 1usize..500, lambda in 0.0f64..2.0) {
        let gamma = (li as f64 - lp as f64).abs() / (li.max(lp) as f64);
        let direct = cos * (-lambda * gamma).exp();
        prop_assert!((score_from_cosine(cos, li, lp, lambda) - direct).abs() < 1e-12);
    }

    #[test]
    fn score_is_non_increasing_in_length_gap(cos in 0.0f64..=1.0, lp in 1usize..300, d1 in 0usize..300, d2 in 0usize..300, lambda in 0.0f64..1.0) {
        let (near, far) = (d1.min(d2), d1.max(d2));
        prop_assert!(score_from_cosine(cos, lp + near, lp, lambda) >= score_from_cosine(cos, lp + far, lp, lambda));
    }

    #[test]
    fn score_is_increasing_in_cosine(c1 in -1.0f64..1.0, gap in 1e-6f64..1.0, li in 1usize..300, lp in 1usize..300, lambda in 0.0f64..1.0) {
        let c2 = (c1 + gap).min(1.0);
        prop_assume!(c2 > c1);
        prop_assert!(score_from_cosine(c2, li, lp, lambda) > score_from_cosine(c1, li, lp, lambda));
    }

    #[test]
    fn score_stays_in_unit_interval(cos in -1.5f64..1.5, li in 1usize..500, lp in 1usize..500, lambda in 0.0f64..5.0) {
        let s = score_from_cosine(cos, li, lp, lambda);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn policy_is_total_and_monotone(f in 0.0f64..1.0, u in 0.0f64..1.0, l in 0.0f64..1.0, bump in 0.0f64..0.5, which in 0usize..3) {
        let cfg = RetrievalConfig::default();
        let base = choose_level(f, Some((u, l)), &cfg);
        let mut s = [f, u, l];
        s[which] += bump;
        let raised = choose_level(s[0], Some((s[1], s[2])), &cfg);
        prop_assert!(raised <= base, "{base:?} -> {raised:?}");
    }

    #[test]
    fn zero_lambda_ranks_by_cosine(cosines in proptest::collection::vec(0.0f64..1.0, 2..8), lp in 1usize..200) {
        let mut table = TableEmbedder::new("table", DIM);
        let lengths: Vec<usize> = (0..cosines.len()).map(|i| 10 + 37 * i).collect();
        let db = database(cosines.len(), &lengths, &mut table);
        // query direction mixes entry full vectors with the given weights
        let mut q = vec![0.0; DIM];
        for (i, c) in cosines.iter().enumerate() {
            q[9 * i] = *c;
        }
        q[SPARE] = 0.1;
        let q = ev(&q);
        let hit = naive_retrieve(&db, &q, lp, Part::Full, 0.0).unwrap();
        let best = (0..cosines.len())
            .fold(0, |b, i| if q.values()[9 * i] > q.values()[9 * b] { i } else { b });
        prop_assert_eq!(hit.entry_id, format!("e{best}"));
    }
}

#[test]
fn naive_single_entry_wins_regardless_of_score() {
    let mut table = TableEmbedder::new("table", DIM);
    let db = database(1, &[40], &mut table);
    let hit = naive_retrieve(&db, &ev(&basis(SPARE)), 40, Part::Full, 0.05).unwrap();
    assert_eq!(hit.entry_id, "e0");
    assert_eq!(hit.score, 0.0);
}

#[test]
fn naive_length_breaks_equal_cosines() {
    let mut table = TableEmbedder::new("table", DIM);
    let mut db = database(2, &[100, 60], &mut table);
    // both full descriptions share one direction
    let shared = ev(&basis(0));
    for e in &mut db.entries {
        e.embeddings.insert("full".into(), shared.clone());
    }
    let hit = naive_retrieve(&db, &shared, 60, Part::Full, 0.05).unwrap();
    assert_eq!(hit.entry_id, "e1");
    assert_eq!(hit.score, 1.0);
    let loser = score_from_cosine(1.0, 100, 60, 0.05);
    assert!((loser - (-0.05f64 * 0.4).exp()).abs() < 1e-15);

    // equal scores: smaller id wins
    db.entries[0].length = 60;
    assert_eq!(naive_retrieve(&db, &shared, 60, Part::Full, 0.05).unwrap().entry_id, "e0");
}

#[test]
fn naive_on_empty_database_fails() {
    let db = MotionDatabase::empty("/tmp");
    assert!(naive_retrieve(&db, &ev(&basis(0)), 10, Part::Full, 0.05).is_err());
}

fn ctx<'a>(llm: &'a dyn rmd_core::agents::LlmProvider, table: &'a TableEmbedder, prompts: &'a PromptSet) -> RetrievalContext<'a> {
    RetrievalContext {
        llm,
        embedder: table,
        prompts,
        agent: AgentConfig::default(),
        seed: 7,
    }
}

#[test]
fn single_description_needs_no_agent_call() {
    let mut table = TableEmbedder::new("table", DIM);
    let db = database(3, &[50, 50, 50], &mut table);
    table.insert("raise the right arm", toward(9 + part_index(Part::RightArm), 0.8)).unwrap();
    let llm = RecordingLlm::new(FixtureLlm::new());
    let prompts = PromptSet::default();
    let c = ctx(&llm, &table, &prompts);
    let sel = retrieve_part_with_agent(
        &db,
        Part::RightArm,
        "a person raises the right arm",
        &["raise the right arm".to_string()],
        50,
        &RetrievalConfig::default(),
        &c,
    )
    .unwrap();
    let naive = naive_retrieve(&db, &ev(&toward(9 + part_index(Part::RightArm), 0.8)), 50, Part::RightArm, 0.05).unwrap();
    assert_eq!(sel.entry_id, naive.entry_id);
    assert!((sel.score - naive.score).abs() < 1e-12);
    assert!(llm.calls().is_empty());
}

#[test]
fn agent_choice_and_max_score_come_from_different_candidates() {
    let mut table = TableEmbedder::new("table", DIM);
    let db = database(5, &[50; 5], &mut table);
    let upper = part_index(Part::Upper);
    let cos = [0.70, 0.80, 0.75, 0.90, 0.60];
    let descriptions: Vec<String> = (0..5).map(|i| format!("query upper {i}")).collect();
    for (i, d) in descriptions.iter().enumerate() {
        table.insert(d.clone(), toward(9 * i + upper, cos[i])).unwrap();
    }
    let prompts = PromptSet::default();
    let listing: Vec<String> = (0..5).map(|i| format!("e{i} upper")).collect();
    let listing: Vec<&str> = listing.iter().map(String::as_str).collect();
    let prompt = prompts.render_selection("upper body", "the original prompt", &listing);
    let mut fixture = FixtureLlm::new();
    fixture.insert(&prompt, None, "Candidate two fits the upper body best.\n2");
    let llm = RecordingLlm::new(fixture);
    let c = ctx(&llm, &table, &prompts);
    let sel = retrieve_part_with_agent(&db, Part::Upper, "the original prompt", &descriptions, 50, &RetrievalConfig::default(), &c)
        .unwrap();
    // scores enumerated by hand: equal lengths, so score = cosine
    assert_eq!(sel.entry_id, "e1");
    assert!((sel.selected_score - 0.80).abs() < 1e-8);
    assert!((sel.max_score - 0.90).abs() < 1e-8);
    assert_eq!(sel.score, sel.max_score);
    assert!(!sel.agent_fallback);
    let calls = llm.calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].prompt, prompt);
    assert_eq!(calls[0].temperature, 0.0);

    let cfg = RetrievalConfig {
        score_rule: ScoreRule::Selected,
        ..RetrievalConfig::default()
    };
    let sel = retrieve_part_with_agent(&db, Part::Upper, "the original prompt", &descriptions, 50, &cfg, &c).unwrap();
    assert_eq!(sel.score, sel.selected_score);
}

#[test]
fn candidates_collapsing_to_one_entry_keep_best_score() {
    let mut table = TableEmbedder::new("table", DIM);
    let db = database(3, &[50; 3], &mut table);
    let lower = part_index(Part::Lower);
    let descriptions: Vec<String> = (0..4).map(|i| format!("legs {i}")).collect();
    for (i, d) in descriptions.iter().enumerate() {
        table.insert(d.clone(), toward(9 * 2 + lower, 0.5 + 0.1 * i as f64)).unwrap();
    }
    let llm = RecordingLlm::new(FixtureLlm::new());
    let prompts = PromptSet::default();
    let c = ctx(&llm, &table, &prompts);
    let sel = retrieve_part_with_agent(&db, Part::Lower, "x", &descriptions, 50, &RetrievalConfig::default(), &c).unwrap();
    assert_eq!(sel.entry_id, "e2");
    assert_eq!(sel.candidates.len(), 1);
    assert!((sel.score - 0.8).abs() < 1e-8);
    assert!(llm.calls().is_empty());
}

/// Fixture where the query's full score, half replies and fine replies are
/// pinned through the embedding table.
struct Scenario {
    db: MotionDatabase,
    table: TableEmbedder,
    llm: FixtureLlm,
}

fn scenario(prompt: &str, s_full: f64, s_upper: f64, s_lower: f64) -> Scenario {
    let mut table = TableEmbedder::new("table", DIM);
    let db = database(3, &[40, 40, 40], &mut table);
    table.insert(prompt, toward(0, s_full)).unwrap();
    table.insert("arms wave", toward(9 + part_index(Part::Upper), s_upper)).unwrap();
    table.insert("legs walk", toward(9 * 2 + part_index(Part::Lower), s_lower)).unwrap();
    let fine_texts = ["head still", "torso upright", "left arm up", "right arm down", "left leg; right leg", "forward path"];
    let fine_lines = ["head still", "torso upright", "left arm up", "right arm down", "left leg", "right leg", "forward path"];
    for (i, (&part, text)) in Part::FINE.iter().zip(fine_texts).enumerate() {
        table.insert(text, toward(9 * (i % 3) + part_index(part), 0.5)).unwrap();
    }
    let prompts = PromptSet::default();
    let mut llm = FixtureLlm::new();
    llm.insert(&prompts.render_half(prompt), None, "arms wave\nlegs walk");
    llm.insert(&prompts.render_fine(prompt), None, fine_lines.join("\n"));
    Scenario { db, table, llm }
}

fn run(s: &Scenario, prompt: &str) -> (rmd_core::retrieval::RetrievalPlan, usize) {
    let llm = RecordingLlm::new(&s.llm);
    let prompts = PromptSet::default();
    let c = ctx(&llm, &s.table, &prompts);
    let q = Query::embed(prompt, 40, &s.table, 0).unwrap();
    let plan = hierarchical_retrieve(&s.db, &q, &RetrievalConfig::default(), &c).unwrap();
    plan.validate().unwrap();
    (plan, llm.calls().len())
}

#[test]
fn full_level_when_full_score_passes() {
    let s = scenario("a person waves", 0.97, 0.0, 0.0);
    let (plan, calls) = run(&s, "a person waves");
    assert_eq!(plan.level, Level::Full);
    assert_eq!(plan.selections.len(), 1);
    assert_eq!(plan.selections[&Part::Full].entry_id, "e0");
    assert!((plan.decided_scores.s_full - 0.97).abs() < 1e-8);
    assert_eq!(calls, 0);
}

#[test]
fn half_level_when_mean_passes() {
    let s = scenario("a person waves while walking", 0.90, 0.97, 0.99);
    let (plan, calls) = run(&s, "a person waves while walking");
    assert_eq!(plan.level, Level::Half);
    assert_eq!(plan.selections[&Part::Upper].entry_id, "e1");
    assert_eq!(plan.selections[&Part::Lower].entry_id, "e2");
    assert!((plan.decided_scores.s_half_mean.unwrap() - 0.98).abs() < 1e-8);
    // k half samples and no fine request
    assert_eq!(calls, AgentConfig::default().k);
}

#[test]
fn fine_level_when_half_mean_fails() {
    let s = scenario("a person waves while walking slowly", 0.90, 0.94, 0.96);
    let (plan, calls) = run(&s, "a person waves while walking slowly");
    assert_eq!(plan.level, Level::Fine);
    assert_eq!(plan.selections.len(), 6);
    assert!((plan.decided_scores.s_half_mean.unwrap() - 0.95).abs() < 1e-8);
    assert_eq!(calls, 2 * AgentConfig::default().k);
}

#[test]
fn hierarchical_retrieval_is_deterministic() {
    let s = scenario("a person waves while walking slowly", 0.90, 0.94, 0.96);
    let (a, _) = run(&s, "a person waves while walking slowly");
    let (b, _) = run(&s, "a person waves while walking slowly");
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn stub_embedder_retrieves_exact_text() {
    let stub = StubEmbedder::new(128);
    let mut db = MotionDatabase::empty("/tmp");
    db.embedding_dim = 128;
    for (i, text) in ["a person walks forward", "a person jumps", "someone waves"].iter().enumerate() {
        let v = rmd_core::corpus::embed_text(&stub, text, 0).unwrap();
        db.entries.push(DatabaseEntry {
            id: format!("m{i}"),
            motion_path: String::new(),
            length: 30,
            fps: 20.0,
            texts_full: vec![text.to_string()],
            decomposition: None,
            embeddings: BTreeMap::from([("full".to_string(), v)]),
        });
    }
    let q = rmd_core::corpus::embed_text(&stub, "A person JUMPS", 0).unwrap();
    let hit = naive_retrieve(&db, &q, 30, Part::Full, 0.05).unwrap();
    assert_eq!(hit.entry_id, "m1");
    assert!((hit.score - 1.0).abs() < 1e-8);
}
