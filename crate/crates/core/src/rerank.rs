//! Listwise LLM re-ranking of fused candidates.
//!
//! The model sees the query and each candidate's transcription and
//! description, and is asked for a JSON array of candidate indices. The
//! answer is parsed leniently and repaired into a permutation; when the
//! model fails or says nothing usable, the input order is kept and the
//! outcome is flagged as degraded.

use crate::fusion::ScoredVideo;
use crate::llm::LlmClient;
use crate::store::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;

pub const RERANK_PROMPT_VERSION: &str = "rerank-v1";

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("invalid rerank request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub video_id: String,
    pub transcription: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankRequest {
    pub query: String,
    pub candidates: Vec<RerankCandidate>,
}

impl RerankRequest {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.candidates.is_empty() {
            return Err(RerankError::InvalidRequest("no candidates".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.video_id.as_str()) {
                return Err(RerankError::InvalidRequest(format!(
                    "duplicate candidate {}",
                    c.video_id
                )));
            }
        }
        Ok(())
    }
}

pub fn build_rerank_prompt(req: &RerankRequest) -> String {
    let mut p = String::from(
        "You are re-ranking video search results.\n\
         Output ONLY a JSON array of the 0-based candidate indices, ordered from most to least \
         relevant to the query. Do not output anything else.\n\n",
    );
    let _ = writeln!(p, "Query: {}", req.query);
    p.push_str("\nCandidates:\n");
    for (i, c) in req.candidates.iter().enumerate() {
        let _ = writeln!(
            p,
            "[{i}] transcription: {} | description: {}",
            c.transcription, c.description
        );
    }
    p
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOrder {
    pub order: Vec<usize>,
    /// Set when the text held no integer array and identity order was used.
    pub warning: Option<String>,
}

fn skip_ws(b: &[u8], mut i: usize) -> usize {
    while i < b.len() && matches!(b[i], b' ' | b'\t' | b'\n' | b'\r') {
        i += 1;
    }
    i
}

/// Parses `[int, int, ...]` starting at `b[start] == b'['`. Negative or
/// oversized integers come back as `None`.
fn int_array_at(b: &[u8], start: usize) -> Option<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut i = skip_ws(b, start + 1);
    if b.get(i) == Some(&b']') {
        return Some(out);
    }
    loop {
        let neg = b.get(i) == Some(&b'-');
        if neg {
            i += 1;
        }
        let digits_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        let digits = std::str::from_utf8(&b[digits_start..i]).ok()?;
        out.push(if neg { None } else { digits.parse::<usize>().ok() });
        i = skip_ws(b, i);
        match b.get(i) {
            Some(b',') => i = skip_ws(b, i + 1),
            Some(b']') => return Some(out),
            _ => return None,
        }
    }
}

/// Extracts the first JSON integer array from `text` and repairs it into a
/// permutation of `0..k`: out-of-range and repeated entries are dropped and
/// missing indices appended in ascending order. Total over all inputs.
pub fn parse_rerank_output(text: &str, k: usize) -> ParsedOrder {
    let b = text.as_bytes();
    let found = b
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == b'[')
        .find_map(|(i, _)| int_array_at(b, i));
    let Some(raw) = found else {
        return ParsedOrder {
            order: (0..k).collect(),
            warning: Some("no integer array in reranker output; kept original order".into()),
        };
    };
    let mut seen = vec![false; k];
    let mut order = Vec::with_capacity(k);
    for idx in raw.into_iter().flatten() {
        if idx < k && !seen[idx] {
            seen[idx] = true;
            order.push(idx);
        }
    }
    order.extend((0..k).filter(|&i| !seen[i]));
    ParsedOrder {
        order,
        warning: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedVideo {
    pub video_id: String,
    pub transcription: String,
    pub description: String,
    /// 1-based position before re-ranking.
    pub pre_rank: usize,
    /// 1-based position after re-ranking.
    pub post_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub videos: Vec<RerankedVideo>,
    /// True when the original order was kept because the LLM failed or
    /// returned no usable array.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
}

fn apply(req: &RerankRequest, order: &[usize]) -> Vec<RerankedVideo> {
    order
        .iter()
        .enumerate()
        .map(|(post, &pre)| {
            let c = &req.candidates[pre];
            RerankedVideo {
                video_id: c.video_id.clone(),
                transcription: c.transcription.clone(),
                description: c.description.clone(),
                pre_rank: pre + 1,
                post_rank: post + 1,
            }
        })
        .collect()
}

/// Never fails because of the LLM: on error the original order is returned
/// with `degraded` set.
pub fn rerank(req: &RerankRequest, llm: &dyn LlmClient, max_tokens: u32) -> Result<RerankOutcome, RerankError> {
    req.validate()?;
    let k = req.candidates.len();
    let prompt = build_rerank_prompt(req);
    match llm.complete(&prompt, max_tokens) {
        Ok(text) => {
            let parsed = parse_rerank_output(&text, k);
            Ok(RerankOutcome {
                videos: apply(req, &parsed.order),
                degraded: parsed.warning.is_some(),
                warning: parsed.warning,
                raw_output: Some(text),
            })
        }
        Err(e) => {
            tracing::warn!(error = %e, "reranker unavailable, keeping fused order");
            let identity: Vec<usize> = (0..k).collect();
            Ok(RerankOutcome {
                videos: apply(req, &identity),
                degraded: true,
                warning: Some(e.to_string()),
                raw_output: None,
            })
        }
    }
}

/// Re-ranks a fused result list in place, renumbering `rank` to the new
/// order. Returns whether the re-ranker degraded to the fused order.
/// An empty list is left alone.
pub fn rerank_results(
    corpus: &Corpus,
    query: &str,
    results: &mut Vec<ScoredVideo>,
    llm: &dyn LlmClient,
    max_tokens: u32,
) -> Result<bool, RerankError> {
    if results.is_empty() {
        return Ok(false);
    }
    let candidates = results
        .iter()
        .map(|v| {
            let doc = corpus.document(&v.video_id);
            RerankCandidate {
                video_id: v.video_id.clone(),
                transcription: doc.map(|d| d.transcription.clone()).unwrap_or_default(),
                description: doc.map(|d| d.description.clone()).unwrap_or_default(),
            }
        })
        .collect();
    let outcome = rerank(
        &RerankRequest {
            query: query.to_string(),
            candidates,
        },
        llm,
        max_tokens,
    )?;
    let mut old: Vec<Option<ScoredVideo>> = std::mem::take(results).into_iter().map(Some).collect();
    for v in &outcome.videos {
        let mut sv = old[v.pre_rank - 1].take().expect("rerank order is a permutation");
        sv.rank = v.post_rank;
        results.push(sv);
    }
    Ok(outcome.degraded)
}
