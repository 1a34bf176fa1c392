//! Multimodal video retrieval: hashing reference embedder, HNSW indexes,
//! fused vision/audio-text search, LLM re-ranking, conversational agents,
//! task-vector merging and an offline evaluation harness.

pub mod agents;
pub mod embed;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod merge;
pub mod remote;
pub mod rerank;
pub mod store;

pub use embed::{Embedder, EmbedderConfig, Embedding, ReferenceEmbedder};
pub use fusion::{fused_search, FusionConfig, ScoredVideo};
pub use index::{HnswIndex, IndexParams};
pub use ingest::{IngestConfig, VideoDocument, VideoManifestRecord};
pub use llm::{LlmClient, LlmSlot, ScriptedLlm};
pub use rerank::{rerank, RerankOutcome};
pub use store::Corpus;
