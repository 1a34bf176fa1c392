//! Translation and transcription providers used at indexing time.

use crate::remote::JsonClient;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("translation unavailable: {0}")]
    TranslationUnavailable(String),
    #[error("transcription unavailable: {0}")]
    TranscriptionUnavailable(String),
    #[error("provider config: {0}")]
    Config(String),
}

pub trait Translator: Send + Sync {
    /// Translates `text` into English.
    fn translate(&self, text: &str) -> Result<String, ProviderError>;
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str) -> Result<String, ProviderError> {
        Ok(text.to_string())
    }
}

/// Word-for-word lookup table. Tokens are matched after lowercasing;
/// unknown tokens pass through lowercased.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DictionaryTranslator {
    pub words: HashMap<String, String>,
}

impl DictionaryTranslator {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            words: pairs
                .into_iter()
                .map(|(k, v)| (k.into().to_lowercase(), v.into()))
                .collect(),
        }
    }

    /// Reads a JSON object mapping source words to English words.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let words: HashMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(words))
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str) -> Result<String, ProviderError> {
        let lines: Vec<String> = text
            .lines()
            .map(|line| {
                line.split_whitespace()
                    .map(|tok| {
                        let low = tok.to_lowercase();
                        self.words.get(&low).cloned().unwrap_or(low)
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        Ok(lines.join("\n"))
    }
}

impl<F> Translator for F
where
    F: Fn(&str) -> Result<String, ProviderError> + Send + Sync,
{
    fn translate(&self, text: &str) -> Result<String, ProviderError> {
        self(text)
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    text: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

/// `POST /translate {"text","target":"en"} -> {"text"}`
#[derive(Debug, Clone)]
pub struct RemoteTranslator {
    client: JsonClient,
}

impl RemoteTranslator {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        Self {
            client: JsonClient::new(endpoint, timeout, retries),
        }
    }
}

impl Translator for RemoteTranslator {
    fn translate(&self, text: &str) -> Result<String, ProviderError> {
        let resp: TextResponse = self
            .client
            .post("/translate", &TranslateRequest { text, target: "en" })
            .map_err(|e| ProviderError::TranslationUnavailable(e.to_string()))?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub language: String,
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, audio: &[u8]) -> Result<Transcript, ProviderError>;
}

#[derive(Serialize)]
struct TranscribeRequest {
    audio: String,
}

/// `POST /transcribe {"audio": base64} -> {"text","language"}`
#[derive(Debug, Clone)]
pub struct RemoteTranscriber {
    client: JsonClient,
}

impl RemoteTranscriber {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        Self {
            client: JsonClient::new(endpoint, timeout, retries),
        }
    }
}

impl Transcriber for RemoteTranscriber {
    fn transcribe(&self, audio: &[u8]) -> Result<Transcript, ProviderError> {
        use base64::Engine as _;
        let audio = base64::engine::general_purpose::STANDARD.encode(audio);
        self.client
            .post("/transcribe", &TranscribeRequest { audio })
            .map_err(|e| ProviderError::TranscriptionUnavailable(e.to_string()))
    }
}
