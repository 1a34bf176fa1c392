//! The indexed corpus: document store plus the vision and audio-text
//! indexes, optionally backed by a data directory.
//!
//! Directory layout:
//!
//! ```text
//! <data>/corpus.json          dimension, index params, ingest config
//! <data>/content/<id>.json    one VideoDocument per video
//! <data>/vision.idx           HNSW over frame embeddings
//! <data>/audio.idx            HNSW over transcription/description embeddings
//! ```
//!
//! Documents are written as each record is ingested; index files on
//! [`Corpus::flush`]. On open, index files that do not match the documents
//! are rebuilt by replaying documents in ingestion order.

use crate::embed::Embedder;
use crate::index::{HnswIndex, IndexError, IndexParams};
use crate::ingest::{embed_record, IngestConfig, IngestError, Translator, VideoDocument, VideoManifestRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const META_FILE: &str = "corpus.json";
const CONTENT_DIR: &str = "content";
const VISION_FILE: &str = "vision.idx";
const AUDIO_FILE: &str = "audio.idx";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusMeta {
    dimension: usize,
    index: IndexParams,
    ingest: IngestConfig,
}

/// Outcome of a batch ingestion.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct IngestReport {
    pub indexed: Vec<String>,
    /// (video id or manifest position, error message)
    pub skipped: Vec<(String, String)>,
}

pub struct Corpus {
    dir: Option<PathBuf>,
    embedder: Arc<dyn Embedder>,
    translator: Arc<dyn Translator>,
    ingest: IngestConfig,
    vision: HnswIndex,
    audio: HnswIndex,
    docs: BTreeMap<String, VideoDocument>,
    next_seq: u64,
}

impl std::fmt::Debug for Corpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Corpus")
            .field("dir", &self.dir)
            .field("videos", &self.docs.len())
            .field("vision", &self.vision.len())
            .field("audio", &self.audio.len())
            .finish()
    }
}

/// File name for a video id: safe characters kept, everything else
/// escaped as `%XX`.
fn doc_file_name(id: &str) -> String {
    let mut out = String::with_capacity(id.len() + 5);
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".json");
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn store_err(e: impl std::fmt::Display) -> IngestError {
    IngestError::Store(e.to_string())
}

impl Corpus {
    pub fn in_memory(
        embedder: Arc<dyn Embedder>,
        translator: Arc<dyn Translator>,
        params: IndexParams,
        ingest: IngestConfig,
    ) -> Result<Self, IngestError> {
        let dim = embedder.dimension();
        Ok(Self {
            dir: None,
            vision: HnswIndex::new(dim, params)?,
            audio: HnswIndex::new(dim, params)?,
            embedder,
            translator,
            ingest,
            docs: BTreeMap::new(),
            next_seq: 0,
        })
    }

    /// True when `dir` holds a corpus.
    pub fn exists(dir: &Path) -> bool {
        dir.join(META_FILE).is_file()
    }

    /// Opens the corpus in `dir`, creating it when absent. A fresh directory
    /// takes `params` and `ingest`; an existing one keeps its stored
    /// settings except `ef_search`, which is a query-time knob.
    pub fn open(
        dir: &Path,
        embedder: Arc<dyn Embedder>,
        translator: Arc<dyn Translator>,
        params: IndexParams,
        ingest: IngestConfig,
    ) -> Result<Self, IngestError> {
        fs::create_dir_all(dir.join(CONTENT_DIR))?;
        let meta_path = dir.join(META_FILE);
        let meta = if meta_path.exists() {
            let meta: CorpusMeta =
                serde_json::from_slice(&fs::read(&meta_path)?).map_err(store_err)?;
            if meta.dimension != embedder.dimension() {
                return Err(IngestError::Store(format!(
                    "corpus in {} has dimension {}, embedder has {}",
                    dir.display(),
                    meta.dimension,
                    embedder.dimension()
                )));
            }
            meta
        } else {
            let meta = CorpusMeta {
                dimension: embedder.dimension(),
                index: params,
                ingest,
            };
            write_atomic(&meta_path, &serde_json::to_vec_pretty(&meta).map_err(store_err)?)?;
            meta
        };
        let mut corpus = Self::in_memory(embedder, translator, meta.index, meta.ingest)?;
        corpus.dir = Some(dir.to_path_buf());

        let mut docs: Vec<VideoDocument> = Vec::new();
        for entry in fs::read_dir(dir.join(CONTENT_DIR))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let doc: VideoDocument = serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| store_err(format!("{}: {e}", path.display())))?;
            docs.push(doc);
        }
        docs.sort_by_key(|d| d.seq);
        corpus.next_seq = docs.last().map_or(0, |d| d.seq + 1);
        corpus.docs = docs.into_iter().map(|d| (d.video_id.clone(), d)).collect();

        let vision = Self::load_index(&dir.join(VISION_FILE));
        let audio = Self::load_index(&dir.join(AUDIO_FILE));
        match (vision, audio) {
            (Some(v), Some(a)) if corpus.indexes_match(&v, &a) => {
                corpus.vision = v;
                corpus.audio = a;
            }
            _ => {
                tracing::warn!(dir = %dir.display(), "index files missing or stale, rebuilding");
                corpus.rebuild_indexes()?;
                corpus.flush()?;
            }
        }
        corpus.set_ef_search(params.ef_search);
        Ok(corpus)
    }

    fn load_index(path: &Path) -> Option<HnswIndex> {
        if !path.exists() {
            return None;
        }
        match HnswIndex::load(path) {
            Ok(idx) => Some(idx),
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable index");
                None
            }
        }
    }

    fn indexes_match(&self, vision: &HnswIndex, audio: &HnswIndex) -> bool {
        let dim = self.embedder.dimension();
        let expect_v = self.docs.values().filter(|d| !d.vision.missing).count();
        let expect_a = self.docs.values().filter(|d| !d.audio.missing).count();
        vision.dim() == dim
            && audio.dim() == dim
            && vision.len() == expect_v
            && audio.len() == expect_a
            && vision.ids().all(|id| self.docs.contains_key(id))
            && audio.ids().all(|id| self.docs.contains_key(id))
    }

    fn rebuild_indexes(&mut self) -> Result<(), IndexError> {
        let dim = self.embedder.dimension();
        let params = *self.vision.params();
        self.vision = HnswIndex::new(dim, params)?;
        self.audio = HnswIndex::new(dim, params)?;
        let mut ordered: Vec<&VideoDocument> = self.docs.values().collect();
        ordered.sort_by_key(|d| d.seq);
        for doc in ordered {
            if !doc.vision.missing {
                self.vision.insert(&doc.video_id, &doc.vision)?;
            }
            if !doc.audio.missing {
                self.audio.insert(&doc.video_id, &doc.audio)?;
            }
        }
        Ok(())
    }

    /// Writes both index files. A no-op for in-memory corpora.
    pub fn flush(&self) -> Result<(), IndexError> {
        if let Some(dir) = &self.dir {
            self.vision.save(&dir.join(VISION_FILE))?;
            self.audio.save(&dir.join(AUDIO_FILE))?;
        }
        Ok(())
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn ingest_config(&self) -> &IngestConfig {
        &self.ingest
    }

    pub fn index_params(&self) -> &IndexParams {
        self.vision.params()
    }

    pub fn set_ef_search(&mut self, ef_search: usize) {
        self.vision.set_ef_search(ef_search);
        self.audio.set_ef_search(ef_search);
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vision_index(&self) -> &HnswIndex {
        &self.vision
    }

    pub fn audio_index(&self) -> &HnswIndex {
        &self.audio
    }

    pub fn document(&self, id: &str) -> Option<&VideoDocument> {
        self.docs.get(id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &VideoDocument> {
        self.docs.values()
    }

    /// Embeds and indexes one record, persisting its document. Index files
    /// are not rewritten until [`Corpus::flush`].
    pub fn ingest_record(&mut self, record: &VideoManifestRecord) -> Result<&VideoDocument, IngestError> {
        if self.docs.contains_key(&record.video_id) {
            return Err(IngestError::AlreadyIndexed(record.video_id.clone()));
        }
        let mut doc = embed_record(
            record,
            &self.ingest,
            self.embedder.as_ref(),
            self.translator.as_ref(),
        )?;
        doc.seq = self.next_seq;
        if let Some(dir) = &self.dir {
            let path = dir.join(CONTENT_DIR).join(doc_file_name(&doc.video_id));
            write_atomic(&path, &serde_json::to_vec(&doc).map_err(store_err)?)?;
        }
        if !doc.vision.missing {
            self.vision.insert(&doc.video_id, &doc.vision)?;
        }
        if !doc.audio.missing {
            self.audio.insert(&doc.video_id, &doc.audio)?;
        }
        self.next_seq += 1;
        let id = doc.video_id.clone();
        Ok(self.docs.entry(id).or_insert(doc))
    }

    /// Ingests records in order, skipping (and logging) the ones that fail,
    /// then flushes the indexes.
    pub fn ingest_all<I>(&mut self, records: I) -> Result<IngestReport, IngestError>
    where
        I: IntoIterator<Item = Result<VideoManifestRecord, IngestError>>,
    {
        let mut report = IngestReport::default();
        for (pos, rec) in records.into_iter().enumerate() {
            let outcome = rec.and_then(|r| self.ingest_record(&r).map(|d| d.video_id.clone()));
            match outcome {
                Ok(id) => report.indexed.push(id),
                Err(e) => {
                    let key = match &e {
                        IngestError::AlreadyIndexed(id)
                        | IngestError::EmptyRecord(id)
                        | IngestError::TranslationUnavailable { id, .. } => id.clone(),
                        _ => format!("#{}", pos + 1),
                    };
                    tracing::error!(record = %key, error = %e, "skipping record");
                    report.skipped.push((key, e.to_string()));
                }
            }
        }
        self.flush()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_file_names_are_safe() {
        assert_eq!(doc_file_name("abc-1_2"), "abc-1_2.json");
        assert_eq!(doc_file_name("a/b c"), "a%2Fb%20c.json");
        assert_eq!(doc_file_name(".."), "%2E%2E.json");
    }
}
