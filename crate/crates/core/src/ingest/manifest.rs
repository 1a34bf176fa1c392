use super::{IngestError, Transcriber};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One JSONL manifest line as written on disk. Frame and audio references
/// are either paths (relative to the manifest) or `base64:<payload>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub video_id: String,
    #[serde(default)]
    pub frames: Vec<String>,
    #[serde(default)]
    pub transcription: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "undetermined")]
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

fn undetermined() -> String {
    "und".to_string()
}

/// A manifest record with frame payloads loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifestRecord {
    pub video_id: String,
    pub frames: Vec<Vec<u8>>,
    /// Original reference for each entry of `frames`.
    pub frame_refs: Vec<String>,
    pub transcription: String,
    pub description: String,
    pub language: String,
}

impl VideoManifestRecord {
    pub fn new(video_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            frames: Vec::new(),
            frame_refs: Vec::new(),
            transcription: String::new(),
            description: String::new(),
            language: "en".into(),
        }
    }

    pub fn with_frames(mut self, frames: Vec<Vec<u8>>) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_transcription(mut self, text: impl Into<String>) -> Self {
        self.transcription = text.into();
        self
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = text.into();
        self
    }

    pub fn with_language(mut self, lang: impl Into<String>) -> Self {
        self.language = lang.into();
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.video_id.is_empty() {
            return Err(IngestError::InvalidRecord("empty video_id".into()));
        }
        if self.frames.is_empty() && self.transcription.is_empty() && self.description.is_empty() {
            return Err(IngestError::EmptyRecord(self.video_id.clone()));
        }
        Ok(())
    }
}

pub fn resolve_frame(reference: &str, base: &Path) -> Result<Vec<u8>, IngestError> {
    if let Some(payload) = reference.strip_prefix("base64:") {
        return base64::engine::general_purpose::STANDARD
            .decode(payload)
            .map_err(|e| IngestError::InvalidRecord(format!("bad base64 payload: {e}")));
    }
    let path = base.join(reference);
    std::fs::read(&path)
        .map_err(|e| IngestError::InvalidRecord(format!("{}: {e}", path.display())))
}

impl ManifestLine {
    /// Loads frame payloads and, when the line carries audio but no
    /// transcription, asks `transcriber` for one.
    pub fn resolve(
        self,
        base: &Path,
        transcriber: Option<&dyn Transcriber>,
    ) -> Result<VideoManifestRecord, IngestError> {
        let frames = self
            .frames
            .iter()
            .map(|r| resolve_frame(r, base))
            .collect::<Result<Vec<_>, _>>()?;
        let mut transcription = self.transcription;
        let mut language = self.language;
        if let (Some(audio), Some(asr)) = (&self.audio, transcriber) {
            if transcription.is_empty() {
                let bytes = resolve_frame(audio, base)?;
                let t = asr
                    .transcribe(&bytes)
                    .map_err(|e| IngestError::InvalidRecord(e.to_string()))?;
                transcription = t.text;
                if language.is_empty() || language == "und" {
                    language = t.language;
                }
            }
        }
        Ok(VideoManifestRecord {
            video_id: self.video_id,
            frames,
            frame_refs: self.frames,
            transcription,
            description: self.description,
            language,
        })
    }
}

/// Parses a JSONL manifest. Blank lines are ignored; each other line yields
/// a record or the error that prevented loading it.
pub fn read_manifest(
    path: &Path,
    transcriber: Option<&dyn Transcriber>,
) -> Result<Vec<Result<VideoManifestRecord, IngestError>>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let parsed: ManifestLine =
                serde_json::from_str(line).map_err(|e| IngestError::Manifest {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            parsed.resolve(base, transcriber)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_inline_frames() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f0.bin"), b"frame-zero").unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(
            &manifest,
            concat!(
                r#"{"video_id":"a","frames":["f0.bin","base64:aGVsbG8="],"transcription":"t","description":"","language":"en"}"#,
                "\n\n",
                r#"{"video_id":"b","transcription":"x"}"#,
                "\n",
                "not json\n",
            ),
        )
        .unwrap();
        let recs = read_manifest(&manifest, None).unwrap();
        assert_eq!(recs.len(), 3);
        let a = recs[0].as_ref().unwrap();
        assert_eq!(a.frames, vec![b"frame-zero".to_vec(), b"hello".to_vec()]);
        let b = recs[1].as_ref().unwrap();
        assert_eq!(b.language, "und");
        assert!(b.frames.is_empty());
        assert!(matches!(recs[2], Err(IngestError::Manifest { line: 4, .. })));
    }

    #[test]
    fn record_without_any_content_is_empty() {
        let rec = VideoManifestRecord::new("v");
        assert!(matches!(rec.validate(), Err(IngestError::EmptyRecord(_))));
        assert!(matches!(
            VideoManifestRecord::new("").with_transcription("x").validate(),
            Err(IngestError::InvalidRecord(_))
        ));
    }
}
