mod common;

use common::{assert_golden, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vagent_core::llm::{Matcher, Reply, ScriptedLlm};
use vagent_core::rerank::{
    build_rerank_prompt, parse_rerank_output, rerank, RerankCandidate, RerankRequest,
};

fn request(n: usize) -> RerankRequest {
    RerankRequest {
        query: "storm over the harbor".into(),
        candidates: (0..n)
            .map(|i| RerankCandidate {
                video_id: format!("vid{i}"),
                transcription: format!("transcript {i}"),
                description: if i == 1 { String::new() } else { format!("about {i}") },
            })
            .collect(),
    }
}

fn is_permutation(order: &[usize], k: usize) -> bool {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    sorted == (0..k).collect::<Vec<_>>()
}

#[test]
fn three_candidate_prompt_golden() {
    let req = RerankRequest {
        query: "boats leaving the harbor at dawn".into(),
        candidates: vec![
            RerankCandidate {
                video_id: "a".into(),
                transcription: "the ferry departs at six".into(),
                description: "harbor timelapse".into(),
            },
            RerankCandidate {
                video_id: "b".into(),
                transcription: "".into(),
                description: "fishing boats at sunrise".into(),
            },
            RerankCandidate {
                video_id: "c".into(),
                transcription: "weather report for the coast".into(),
                description: "".into(),
            },
        ],
    };
    assert_golden("rerank_prompt_3.txt", &build_rerank_prompt(&req));
}

#[test]
fn single_candidate_prompt_has_one_block() {
    let p = build_rerank_prompt(&request(1));
    assert_eq!(p.lines().filter(|l| l.starts_with('[')).count(), 1);
    assert!(p.contains("[0] transcription: transcript 0 | description: about 0"));
    let p2 = build_rerank_prompt(&request(2));
    assert!(p2.contains("[1] transcription: transcript 1 | description: \n"));
}

#[test]
fn repair_examples() {
    assert_eq!(parse_rerank_output("[2,0,1]", 3).order, [2, 0, 1]);
    assert_eq!(parse_rerank_output("[2,2,5]", 3).order, [2, 0, 1]);
    let p = parse_rerank_output("sure! here you go", 4);
    assert_eq!(p.order, [0, 1, 2, 3]);
    assert!(p.warning.is_some());
    assert_eq!(parse_rerank_output("ranking: [\"x\"] then [1, -3, 0]", 2).order, [1, 0]);
}

#[test]
fn fuzzed_outputs_always_yield_permutations() {
    let mut r = rng(1234);
    let alphabet = b"[],0123456789- \n\tabc\"{}:";
    for i in 0..10_000 {
        let k = r.random_range(1..15);
        let text = if i % 2 == 0 {
            let bytes: Vec<u8> = (0..r.random_range(0..64)).map(|_| r.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            (0..r.random_range(0..40))
                .map(|_| alphabet[r.random_range(0..alphabet.len())] as char)
                .collect()
        };
        let parsed = parse_rerank_output(&text, k);
        assert!(is_permutation(&parsed.order, k), "{text:?} -> {:?}", parsed.order);
    }
}

#[test]
fn timeout_keeps_order_and_flags_degraded() {
    let req = request(5);
    let out = rerank(&req, &ScriptedLlm::constant(Reply::Timeout), 64).unwrap();
    assert!(out.degraded);
    let ids: Vec<&str> = out.videos.iter().map(|v| v.video_id.as_str()).collect();
    assert_eq!(ids, ["vid0", "vid1", "vid2", "vid3", "vid4"]);

    let failing = ScriptedLlm::constant(Reply::Fail("boom".into()));
    assert!(rerank(&req, &failing, 64).unwrap().degraded);
    let junk = ScriptedLlm::constant(Reply::Text("no idea".into()));
    assert!(rerank(&req, &junk, 64).unwrap().degraded);
    let repaired = ScriptedLlm::constant(Reply::Text("[4, 4, 9]".into()));
    let out = rerank(&req, &repaired, 64).unwrap();
    assert!(!out.degraded);
    assert_eq!(out.videos[0].video_id, "vid4");
}

#[test]
fn two_candidates_swap() {
    let out = rerank(&request(2), &ScriptedLlm::constant(Reply::Text("[1,0]".into())), 16).unwrap();
    let ids: Vec<&str> = out.videos.iter().map(|v| v.video_id.as_str()).collect();
    assert_eq!(ids, ["vid1", "vid0"]);
    assert_eq!((out.videos[0].pre_rank, out.videos[0].post_rank), (2, 1));
}

#[test]
fn fixed_shuffle_of_ten() {
    let req = request(10);
    let mut perm: Vec<usize> = (0..10).collect();
    perm.shuffle(&mut rng(10));
    let text = format!("Here is the order: {perm:?}");
    let llm = ScriptedLlm::new("m").rule(Matcher::Contains("Query: storm".into()), Reply::Text(text));
    let out = rerank(&req, &llm, 64).unwrap();
    let want: Vec<String> = perm.iter().map(|&i| req.candidates[i].video_id.clone()).collect();
    let got: Vec<String> = out.videos.iter().map(|v| v.video_id.clone()).collect();
    assert_eq!(got, want);
}

#[test]
fn empty_request_is_rejected() {
    let req = RerankRequest {
        query: "q".into(),
        candidates: vec![],
    };
    assert!(rerank(&req, &ScriptedLlm::echo(), 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parse_is_total(text in ".*", k in 1usize..20) {
        let p = parse_rerank_output(&text, k);
        prop_assert!(is_permutation(&p.order, k));
    }

    #[test]
    fn parse_is_idempotent(text in "[\\[\\], 0-9a-z-]{0,40}", k in 1usize..12) {
        let first = parse_rerank_output(&text, k).order;
        let again = parse_rerank_output(&format!("{first:?}"), k);
        prop_assert_eq!(again.order, first);
        prop_assert!(again.warning.is_none());
    }
}
