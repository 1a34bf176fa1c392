//! Query-time retrieval: weighted fusion of vision and audio-text inner
//! products.
//!
//! Candidates are the union of the top `candidates` ids from each modality
//! index. Every candidate is then rescored exactly from its stored
//! embeddings in both modalities, so a video found only through its
//! transcription still gets its true vision score (and vice versa).

use crate::embed::{EmbedError, Embedding};
use crate::index::{IndexError, SearchHit};
use crate::store::Corpus;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_CANDIDATES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight of the vision score; the audio-text score gets `1 - alpha`.
    pub alpha: f64,
    /// Per-modality candidate depth.
    pub candidates: usize,
    /// Final list length.
    pub k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            candidates: DEFAULT_CANDIDATES,
            k: DEFAULT_K,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FusionError::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.k < 1 {
            return Err(FusionError::InvalidConfig("k must be >= 1".into()));
        }
        if self.candidates < self.k {
            return Err(FusionError::InvalidConfig(format!(
                "candidate depth {} must be >= k {}",
                self.candidates, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredVideo {
    pub video_id: String,
    pub vision_score: f64,
    pub audio_score: f64,
    pub fused_score: f64,
    pub rank: usize,
}

pub fn fuse(alpha: f64, vision: f64, audio: f64) -> f64 {
    alpha * vision + (1.0 - alpha) * audio
}

fn modality_score(stored: &Embedding, query: &Embedding) -> f64 {
    if stored.missing {
        0.0
    } else {
        stored.dot(query)
    }
}

/// Sorts by fused score descending, id ascending, and assigns 1-based ranks.
pub fn rank_in_place(list: &mut [ScoredVideo]) {
    list.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    for (i, v) in list.iter_mut().enumerate() {
        v.rank = i + 1;
    }
}

pub fn fused_search(corpus: &Corpus, query: &str, cfg: &FusionConfig) -> Result<Vec<ScoredVideo>, FusionError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(FusionError::EmptyCorpus);
    }
    let q = corpus.embedder().embed_text(query)?;
    fused_search_embedding(corpus, &q, cfg)
}

/// As [`fused_search`] with a precomputed query embedding.
pub fn fused_search_embedding(
    corpus: &Corpus,
    q: &Embedding,
    cfg: &FusionConfig,
) -> Result<Vec<ScoredVideo>, FusionError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(FusionError::EmptyCorpus);
    }
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for index in [corpus.vision_index(), corpus.audio_index()] {
        if index.is_empty() {
            continue;
        }
        let ef = index.params().ef_search.max(cfg.candidates);
        let hits: Vec<SearchHit> = index.search_with_ef(q, cfg.candidates, ef)?;
        ids.extend(hits.into_iter().map(|h| h.id));
    }
    let mut scored: Vec<ScoredVideo> = ids
        .into_iter()
        .filter_map(|id| {
            let doc = corpus.document(&id)?;
            let vision_score = modality_score(&doc.vision, q);
            let audio_score = modality_score(&doc.audio, q);
            Some(ScoredVideo {
                fused_score: fuse(cfg.alpha, vision_score, audio_score),
                vision_score,
                audio_score,
                video_id: id,
                rank: 0,
            })
        })
        .collect();
    rank_in_place(&mut scored);
    scored.truncate(cfg.k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_arithmetic() {
        assert!((fuse(0.5, 0.8, 0.4) - 0.6).abs() < 1e-12);
        assert_eq!(fuse(1.0, 0.3, 0.9), 0.3);
        assert_eq!(fuse(0.0, 0.3, 0.9), 0.9);
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad_alpha = FusionConfig {
            alpha: 1.5,
            ..FusionConfig::default()
        };
        assert!(bad_alpha.validate().is_err());
        let bad_k = FusionConfig {
            k: 0,
            ..FusionConfig::default()
        };
        assert!(bad_k.validate().is_err());
        let shallow = FusionConfig {
            candidates: 5,
            k: 10,
            ..FusionConfig::default()
        };
        assert!(shallow.validate().is_err());
    }

    #[test]
    fn ranks_are_contiguous_and_tie_break_on_id() {
        let mk = |id: &str, s: f64| ScoredVideo {
            video_id: id.into(),
            vision_score: s,
            audio_score: s,
            fused_score: s,
            rank: 0,
        };
        let mut list = vec![mk("b", 0.5), mk("a", 0.5), mk("c", 0.9)];
        rank_in_place(&mut list);
        let order: Vec<(&str, usize)> = list.iter().map(|v| (v.video_id.as_str(), v.rank)).collect();
        assert_eq!(order, [("c", 1), ("a", 2), ("b", 3)]);
    }
}
