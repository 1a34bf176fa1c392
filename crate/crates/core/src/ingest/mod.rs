//! Indexing-time pipeline: frame sampling, text assembly with optional
//! translation, and embedding of both modalities.

mod manifest;
mod translate;

pub use manifest::{read_manifest, resolve_frame, ManifestLine, VideoManifestRecord};
pub use translate::{
    DictionaryTranslator, IdentityTranslator, ProviderError, RemoteTranscriber, RemoteTranslator,
    Transcriber, Transcript, Translator,
};

use crate::embed::{EmbedError, Embedder, Embedding};
use serde::{Deserialize, Serialize};

pub const DEFAULT_FRAMES_PER_VIDEO: usize = 48;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("video already indexed: {0}")]
    AlreadyIndexed(String),
    #[error("record {0} has neither frames nor text")]
    EmptyRecord(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("translation unavailable for {id}: {reason}")]
    TranslationUnavailable { id: String, reason: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("document store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Frames sampled per video.
    pub frames_per_video: usize,
    /// When false, descriptions are left out of the indexed text.
    pub include_description: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            frames_per_video: DEFAULT_FRAMES_PER_VIDEO,
            include_description: true,
        }
    }
}

/// Uniformly spaced frame positions: all frames when `total <= target`,
/// otherwise `floor(i * total / target)` for `i in 0..target`.
pub fn sample_frame_indices(total: usize, target: usize) -> Vec<usize> {
    assert!(target >= 1, "target frame count must be >= 1");
    if total <= target {
        return (0..total).collect();
    }
    (0..target)
        .map(|i| ((i as u128 * total as u128) / target as u128) as usize)
        .collect()
}

pub fn is_english(language: &str) -> bool {
    language
        .get(..2)
        .is_some_and(|p| p.eq_ignore_ascii_case("en"))
}

/// Joins transcription and description with a newline (either may be
/// empty) and translates the result to English when the source language is
/// not English.
pub fn build_index_text(
    transcription: &str,
    description: &str,
    language: &str,
    translator: &dyn Translator,
) -> Result<String, ProviderError> {
    let combined = match (transcription.is_empty(), description.is_empty()) {
        (_, true) => transcription.to_string(),
        (true, false) => description.to_string(),
        (false, false) => format!("{transcription}\n{description}"),
    };
    if combined.is_empty() || is_english(language) {
        return Ok(combined);
    }
    translator.translate(&combined)
}

/// One indexed video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDocument {
    pub video_id: String,
    /// Ingestion sequence number; index rebuilds replay in this order.
    pub seq: u64,
    pub vision: Embedding,
    pub audio: Embedding,
    pub indexed_text: String,
    pub transcription: String,
    pub description: String,
    pub language: String,
    pub frames_used: usize,
    /// File references of the sampled frames (inline payloads omitted).
    #[serde(default)]
    pub frame_refs: Vec<String>,
}

/// Embeds one record. Does not touch any index or store.
pub fn embed_record(
    record: &VideoManifestRecord,
    cfg: &IngestConfig,
    embedder: &dyn Embedder,
    translator: &dyn Translator,
) -> Result<VideoDocument, IngestError> {
    record.validate()?;
    let picked = sample_frame_indices(record.frames.len(), cfg.frames_per_video);
    let vision = if picked.is_empty() {
        Embedding::missing(embedder.dimension())
    } else {
        let frames: Vec<Vec<u8>> = picked.iter().map(|&i| record.frames[i].clone()).collect();
        embedder.embed_frames(&frames)?
    };
    let description = if cfg.include_description {
        record.description.as_str()
    } else {
        ""
    };
    let indexed_text = build_index_text(
        &record.transcription,
        description,
        &record.language,
        translator,
    )
    .map_err(|e| IngestError::TranslationUnavailable {
        id: record.video_id.clone(),
        reason: e.to_string(),
    })?;
    let audio = embedder.embed_text(&indexed_text)?;
    if vision.missing && audio.missing {
        return Err(IngestError::EmptyRecord(record.video_id.clone()));
    }
    let frame_refs = picked
        .iter()
        .filter_map(|&i| record.frame_refs.get(i))
        .filter(|r| !r.starts_with("base64:"))
        .cloned()
        .collect();
    Ok(VideoDocument {
        video_id: record.video_id.clone(),
        seq: 0,
        vision,
        audio,
        indexed_text,
        transcription: record.transcription.clone(),
        description: record.description.clone(),
        language: record.language.clone(),
        frames_used: picked.len(),
        frame_refs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_even_split() {
        let expected: Vec<usize> = (0..48).map(|i| 2 * i).collect();
        assert_eq!(sample_frame_indices(96, 48), expected);
    }

    #[test]
    fn sampling_takes_everything_when_short() {
        assert_eq!(sample_frame_indices(10, 48), (0..10).collect::<Vec<_>>());
        assert_eq!(sample_frame_indices(48, 48), (0..48).collect::<Vec<_>>());
        assert!(sample_frame_indices(0, 48).is_empty());
    }

    #[test]
    fn sampling_uneven_split() {
        // python3 -c "print([100*i//48 for i in range(48)])"
        let expected = [
            0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 25, 27, 29, 31, 33, 35, 37, 39, 41, 43, 45,
            47, 50, 52, 54, 56, 58, 60, 62, 64, 66, 68, 70, 72, 75, 77, 79, 81, 83, 85, 87, 89, 91,
            93, 95, 97,
        ];
        let got = sample_frame_indices(100, 48);
        assert_eq!(got, expected);
        assert!(got.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn index_text_assembly() {
        let id = IdentityTranslator;
        assert_eq!(build_index_text("fire spreads", "", "en", &id).unwrap(), "fire spreads");
        assert_eq!(build_index_text("t", "d", "en", &id).unwrap(), "t\nd");
        assert_eq!(build_index_text("", "d", "en-US", &id).unwrap(), "d");
        assert_eq!(build_index_text("", "", "es", &id).unwrap(), "");
    }

    #[test]
    fn non_english_text_is_translated() {
        let upper = |t: &str| -> Result<String, ProviderError> { Ok(t.to_uppercase()) };
        assert_eq!(build_index_text("hola", "", "es", &upper).unwrap(), "HOLA");
        assert_eq!(build_index_text("hola", "", "und", &upper).unwrap(), "HOLA");
        assert_eq!(build_index_text("hello", "", "EN", &upper).unwrap(), "hello");
    }

    #[test]
    fn translation_failure_is_reported() {
        let broken =
            |_: &str| -> Result<String, ProviderError> { Err(ProviderError::TranslationUnavailable("down".into())) };
        assert!(build_index_text("hola", "", "es", &broken).is_err());
    }
}
