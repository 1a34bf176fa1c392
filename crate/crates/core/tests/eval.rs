mod common;

use common::{fixture, synth};
use proptest::prelude::*;
use std::sync::Arc;
use vagent_core::embed::ReferenceEmbedder;
use vagent_core::eval::{
    ndcg_at_k, open_cell, parse_queries, read_queries, recall_at_k, run_ablation, run_eval,
    AblationCell, AblationGrid, EvalConfig, EvalError, Gain, Grades, Qrels,
};
use vagent_core::fusion::FusionConfig;
use vagent_core::llm::ScriptedLlm;

#[derive(serde::Deserialize)]
struct Case {
    ranking: Vec<String>,
    grades: Grades,
    k: usize,
    gain: Gain,
    ndcg: u64,
    recall: Option<u64>,
}

#[test]
fn hand_fixture() {
    let grades: Grades = [("a", 1), ("b", 0), ("c", 2)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let n = ndcg_at_k(&["a", "b", "c"], &grades, 10, Gain::Exp);
    assert!((n - 0.688_528_880_940_466_6).abs() < 1e-9, "{n}");
    let rels: Grades = [("a", 1), ("c", 1), ("d", 1)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let r = recall_at_k(&["a", "b", "c", "e"], &rels, 10).unwrap();
    assert_eq!(r, 2.0 / 3.0);
}

#[test]
fn randomized_cases_match_python_oracle_exactly() {
    let cases: Vec<Case> =
        serde_json::from_str(&std::fs::read_to_string(fixture("metrics_cases.json")).unwrap()).unwrap();
    assert_eq!(cases.len(), 200);
    for (i, c) in cases.iter().enumerate() {
        let n = ndcg_at_k(&c.ranking, &c.grades, c.k, c.gain);
        assert_eq!(n.to_bits(), c.ndcg, "case {i}: ndcg {n} vs {}", f64::from_bits(c.ndcg));
        match (recall_at_k(&c.ranking, &c.grades, c.k), c.recall) {
            (Ok(r), Some(want)) => assert_eq!(r.to_bits(), want, "case {i}: recall"),
            (Err(EvalError::NoRelevant), None) => {}
            (got, want) => panic!("case {i}: {got:?} vs {want:?}"),
        }
    }
}

fn grades_strategy() -> impl Strategy<Value = Grades> {
    prop::collection::btree_map("d[0-9]{1,2}", 0u32..4, 1..15)
}

fn ranking_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("d[0-9]{1,2}", 0..40).prop_map(|mut v| {
        let mut seen = std::collections::HashSet::new();
        v.retain(|x| seen.insert(x.clone()));
        v
    })
}

proptest! {
    #[test]
    fn metrics_are_bounded(ranking in ranking_strategy(), grades in grades_strategy(), k in 1usize..30) {
        for gain in [Gain::Exp, Gain::Linear] {
            let n = ndcg_at_k(&ranking, &grades, k, gain);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }
        if let Ok(r) = recall_at_k(&ranking, &grades, k) {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn order_below_cutoff_is_irrelevant(
        ranking in ranking_strategy(),
        grades in grades_strategy(),
        k in 1usize..20,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = ranking.clone();
        if shuffled.len() > k {
            shuffled[k..].shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        }
        prop_assert_eq!(
            ndcg_at_k(&ranking, &grades, k, Gain::Exp).to_bits(),
            ndcg_at_k(&shuffled, &grades, k, Gain::Exp).to_bits()
        );
        prop_assert_eq!(
            recall_at_k(&ranking, &grades, k).ok().map(f64::to_bits),
            recall_at_k(&shuffled, &grades, k).ok().map(f64::to_bits)
        );
    }

    #[test]
    fn single_relevant_doc_at_rank_i(i in 1usize..=10, n in 10usize..30) {
        let ranking: Vec<String> = (0..n).map(|j| format!("x{j}")).collect();
        let grades: Grades = [(format!("x{}", i - 1), 1)].into_iter().collect();
        let got = ndcg_at_k(&ranking, &grades, 10, Gain::Exp);
        prop_assert!((got - 1.0 / ((i + 1) as f64).log2()).abs() < 1e-15);
    }

    #[test]
    fn metrics_are_pure(ranking in ranking_strategy(), grades in grades_strategy()) {
        let a = ndcg_at_k(&ranking, &grades, 10, Gain::Exp);
        let b = ndcg_at_k(&ranking, &grades, 10, Gain::Exp);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

fn exhaustive_cfg() -> EvalConfig {
    EvalConfig {
        fusion: FusionConfig {
            alpha: 0.5,
            candidates: 200,
            k: 10,
        },
        ..EvalConfig::default()
    }
}

fn inputs() -> (Vec<vagent_core::eval::Query>, Qrels) {
    (
        read_queries(&synth::path("queries.tsv")).unwrap(),
        Qrels::read(&synth::path("qrels.txt")).unwrap(),
    )
}

#[test]
fn single_perfect_query() {
    let corpus = synth::corpus(48, true, None);
    let queries = parse_queries("only\tfalcon\n").unwrap();
    let first = vagent_core::fusion::fused_search(&corpus, "falcon", &FusionConfig::default()).unwrap();
    let qrels = Qrels::parse(&format!("only 0 {} 1\n", first[0].video_id)).unwrap();
    let run = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "reference").unwrap();
    assert_eq!((run.ndcg, run.recall), (1.0, 1.0));
}

#[test]
fn run_eval_matches_end_to_end_oracle() {
    let expected = synth::expected();
    let (queries, qrels) = inputs();
    for want in expected["runs"].as_array().unwrap() {
        let frames = want["frames"].as_u64().unwrap() as usize;
        let desc = want["description"].as_bool().unwrap();
        let corpus = synth::corpus(frames, desc, None);
        let run = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "reference").unwrap();
        for q in &run.queries {
            let w = &want["queries"][&q.query_id];
            let ranking: Vec<String> = serde_json::from_value(w["ranking"].clone()).unwrap();
            assert_eq!(q.ranking, ranking, "{} frames={frames} desc={desc}", q.query_id);
            assert_eq!(q.ndcg.to_bits(), w["ndcg"].as_u64().unwrap(), "{}", q.query_id);
            assert_eq!(q.recall.to_bits(), w["recall"].as_u64().unwrap(), "{}", q.query_id);
        }
        assert_eq!(run.evaluated, 20);
        assert_eq!(run.ndcg.to_bits(), want["ndcg"].as_u64().unwrap());
        assert_eq!(run.recall.to_bits(), want["recall"].as_u64().unwrap());
        assert_eq!(run.skipped.len(), 1);
        assert_eq!(run.skipped[0].query_id, "q21");
        assert_eq!(run.missing_queries, ["q99"]);
        assert!(run.unknown_videos.is_empty());
        assert_eq!(run.config.frames, frames);
        assert_eq!(run.config.description, desc);
    }
}

#[test]
fn aggregation_ignores_query_order_and_threads() {
    let corpus = synth::corpus(48, true, None);
    let (mut queries, qrels) = inputs();
    let base = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "r").unwrap();
    queries.reverse();
    let single = EvalConfig {
        threads: 1,
        ..exhaustive_cfg()
    };
    let other = run_eval(&corpus, &queries, &qrels, &single, None, "r").unwrap();
    assert_eq!(base.queries, other.queries);
    assert_eq!(base.ndcg.to_bits(), other.ndcg.to_bits());
    assert_eq!(base.recall.to_bits(), other.recall.to_bits());
}

#[test]
fn identity_reranker_leaves_metrics_unchanged() {
    let corpus = synth::corpus(16, true, None);
    let (queries, qrels) = inputs();
    let identity = ScriptedLlm::constant(vagent_core::llm::Reply::Text(
        "[0,1,2,3,4,5,6,7,8,9]".into(),
    ));
    let off = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "r").unwrap();
    let on_cfg = EvalConfig {
        rerank: true,
        ..exhaustive_cfg()
    };
    let on = run_eval(&corpus, &queries, &qrels, &on_cfg, Some(&identity), "r").unwrap();
    assert_eq!(off.ndcg, on.ndcg);
    assert_eq!(off.recall, on.recall);
    assert!(on.queries.iter().all(|q| !q.rerank_degraded));
    assert_eq!(on.config.reranker_model.as_deref(), Some("scripted"));
}

#[test]
fn missing_judged_videos_are_reported() {
    let corpus = synth::corpus(16, false, None);
    let queries = parse_queries("q01\tfalcon\n").unwrap();
    let qrels = Qrels::parse("q01 0 nowhere 1\nq01 0 vid003 1\n").unwrap();
    let run = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "r").unwrap();
    assert_eq!(run.unknown_videos, [("q01".to_string(), "nowhere".to_string())]);
    assert_eq!(run.evaluated, 1);
}

#[test]
fn ablation_rows_match_independent_runs() {
    let dirs: Vec<tempfile::TempDir> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut cells = Vec::new();
    for ((frames, desc), dir) in [(48, true), (48, false), (16, true), (16, false)].into_iter().zip(&dirs) {
        synth::corpus(frames, desc, Some(dir.path()));
        cells.push(AblationCell {
            frames,
            retrieval_vector: "reference".into(),
            description: desc,
            data_dir: dir.path().to_path_buf(),
        });
    }
    // a cell whose index was never built
    cells.push(AblationCell {
        frames: 32,
        retrieval_vector: "reference".into(),
        description: true,
        data_dir: dirs[0].path().join("absent"),
    });
    let grid = AblationGrid {
        cells: cells.clone(),
        rerank: vec![false, true],
        eval: exhaustive_cfg(),
    };
    let identity = ScriptedLlm::constant(vagent_core::llm::Reply::Text("[]".into()));
    let (queries, qrels) = inputs();
    let embedder = Arc::new(ReferenceEmbedder::new(synth::DIM));
    let report = run_ablation(
        &grid,
        &queries,
        &qrels,
        &mut |cell| open_cell(cell, embedder.clone()),
        Some(&identity),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 10);

    let expected = synth::expected();
    for (i, cell) in cells.iter().take(4).enumerate() {
        let (off, on) = (&report.rows[2 * i], &report.rows[2 * i + 1]);
        assert!(!off.rerank && on.rerank);
        assert_eq!((off.ndcg, off.recall), (on.ndcg, on.recall));

        let corpus = synth::corpus(cell.frames, cell.description, None);
        let solo = run_eval(&corpus, &queries, &qrels, &exhaustive_cfg(), None, "reference").unwrap();
        assert_eq!(off.ndcg, Some(solo.ndcg));
        assert_eq!(off.recall, Some(solo.recall));
        assert_eq!(
            solo.ndcg.to_bits(),
            expected["runs"][i]["ndcg"].as_u64().unwrap()
        );
    }
    assert!(!report.rows[8].available() && !report.rows[9].available());
    let tsv = report.to_tsv(10);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "frames\tretrieval_vector\tdescription\trerank\tndcg@10\tr@10");
    assert_eq!(lines.len(), 11);
    assert!(lines[9].starts_with("32\treference\ton\toff\tn/a\tn/a"));

    let back: vagent_core::eval::AblationReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back.rows, report.rows);
}

#[test]
fn mismatched_cell_settings_are_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    synth::corpus(16, true, Some(dir.path()));
    let cell = AblationCell {
        frames: 48,
        retrieval_vector: "reference".into(),
        description: true,
        data_dir: dir.path().to_path_buf(),
    };
    let err = open_cell(&cell, Arc::new(ReferenceEmbedder::new(synth::DIM))).unwrap_err();
    assert!(err.contains("frames=16"), "{err}");
}
