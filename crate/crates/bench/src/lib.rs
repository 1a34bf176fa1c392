//! Workload generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use vagent_core::embed::{Embedding, ReferenceEmbedder};
use vagent_core::index::{HnswIndex, IndexParams};
use vagent_core::ingest::{IdentityTranslator, IngestConfig, VideoManifestRecord};
use vagent_core::store::Corpus;

pub const WORDS: &[&str] = &[
    "river", "mountain", "city", "night", "dance", "music", "storm", "ocean", "train", "market",
    "festival", "bridge", "forest", "desert", "snow", "crowd", "speech", "parade", "harbor", "garden",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in the cube, then normalized. Good enough for timing.
pub fn unit_vectors(seed: u64, n: usize, dim: usize) -> Vec<Embedding> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            Embedding::new(v.into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

pub fn build_index(vectors: &[Embedding], params: IndexParams) -> HnswIndex {
    let mut idx = HnswIndex::new(vectors[0].dim(), params).unwrap();
    for (i, v) in vectors.iter().enumerate() {
        idx.insert(&format!("doc{i:06}"), v).unwrap();
    }
    idx
}

pub fn sentence(r: &mut impl Rng, words: usize) -> String {
    (0..words).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// An in-memory corpus of `n` bimodal videos under the reference embedder.
pub fn word_corpus(n: usize, dim: usize) -> Corpus {
    let mut r = rng(2024);
    let mut c = Corpus::in_memory(
        Arc::new(ReferenceEmbedder::new(dim)),
        Arc::new(IdentityTranslator),
        IndexParams::default(),
        IngestConfig::default(),
    )
    .unwrap();
    for i in 0..n {
        let frames = (0..4).map(|_| sentence(&mut r, 1).into_bytes()).collect();
        let rec = VideoManifestRecord::new(format!("v{i:05}"))
            .with_transcription(sentence(&mut r, 12))
            .with_frames(frames);
        c.ingest_record(&rec).unwrap();
    }
    c
}
