//! Request handling independent of the HTTP layer. Every method is
//! blocking; the server calls them from worker threads.

use crate::config::{AppConfig, ConfigError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::{Arc, RwLock};
use vagent_core::agents::{
    AgentConfig, AgentError, AgentModels, Clock, Orchestrator, RouteTarget, SessionStore,
    SessionStoreError, SessionVideo, SystemClock,
};
use vagent_core::fusion::{fused_search, FusionConfig, FusionError, ScoredVideo};
use vagent_core::ingest::{IngestError, ManifestLine, Transcriber};
use vagent_core::rerank::rerank_results;
use vagent_core::store::Corpus;

pub const SCHEMA_VERSION: u32 = 1;
/// Upper bound on `k` for one search request.
pub const MAX_K: usize = 1000;

/// An error as the API reports it: HTTP status plus `{code, message}`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(400, code, message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(500, "Internal", message.to_string())
    }

    pub fn body(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "code": self.code,
            "message": self.message,
        })
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::UnknownVideoSelected(_) => Self::bad_request("UnknownVideoSelected", e.to_string()),
            AgentError::TooManySelected { .. } => Self::bad_request("TooManySelected", e.to_string()),
            AgentError::Fusion(FusionError::Embed(_)) => Self::new(502, "EmbedderUnavailable", e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl From<SessionStoreError> for ApiError {
    fn from(e: SessionStoreError) -> Self {
        match e {
            SessionStoreError::UnknownSession(_) => Self::new(404, "SessionNotFound", e.to_string()),
            other => Self::internal(other),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("opening the corpus in {dir}: {source}")]
    Corpus { dir: String, source: IngestError },
    #[error(transparent)]
    Sessions(#[from] SessionStoreError),
    #[error("building model slot {slot}: {message}")]
    Model { slot: &'static str, message: String },
    #[error(transparent)]
    Embedder(#[from] vagent_core::embed::EmbedError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rerank: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub schema_version: u32,
    pub query: String,
    pub k: usize,
    pub alpha: f64,
    pub reranked: bool,
    pub rerank_degraded: bool,
    pub results: Vec<ScoredVideo>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub selected_video_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub route: RouteTarget,
    pub assistant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub videos: Option<Vec<SessionVideo>>,
    pub degraded: bool,
}

pub struct App {
    config: AppConfig,
    agent_config: AgentConfig,
    corpus: RwLock<Corpus>,
    sessions: SessionStore,
    models: AgentModels,
    transcriber: Option<Box<dyn Transcriber>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for App {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("App").field("data_dir", &self.config.data_dir).finish()
    }
}

/// Opens (creating when absent) the corpus under the configured data dir.
pub fn open_corpus(config: &AppConfig) -> Result<Corpus, AppError> {
    Corpus::open(
        &config.data_dir,
        config.embedder.build()?,
        config.build_translator()?,
        config.index,
        config.ingest,
    )
    .map_err(|source| AppError::Corpus {
        dir: config.data_dir.display().to_string(),
        source,
    })
}

pub fn build_models(config: &AppConfig) -> Result<AgentModels, AppError> {
    let build = |slot: &'static str, s: &vagent_core::llm::LlmSlot| {
        s.build().map_err(|e| AppError::Model {
            slot,
            message: e.to_string(),
        })
    };
    Ok(AgentModels {
        router: build("router", &config.llm.router)?,
        reranker: build("reranker", &config.llm.reranker)?,
        chat: build("chat", &config.llm.chat)?,
    })
}

fn lock_poisoned<T>(_: T) -> ApiError {
    ApiError::internal("lock poisoned")
}

impl App {
    pub fn open(config: AppConfig) -> Result<Self, AppError> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: AppConfig, clock: Arc<dyn Clock>) -> Result<Self, AppError> {
        config.validate()?;
        let corpus = open_corpus(&config)?;
        let sessions = SessionStore::open(&config.data_dir.join("sessions"))?;
        let models = build_models(&config)?;
        Ok(Self {
            agent_config: config.agent_config(),
            transcriber: config.build_transcriber(),
            corpus: RwLock::new(corpus),
            sessions,
            models,
            clock,
            config,
        })
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn video_count(&self) -> usize {
        self.corpus.read().map_or(0, |c| c.len())
    }

    pub fn health(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "status": "ok",
            "videos": self.video_count(),
        })
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
        let k = req.k.unwrap_or(self.config.fusion.k);
        if k == 0 || k > MAX_K {
            return Err(ApiError::bad_request("BadK", format!("k must be in 1..={MAX_K}, got {k}")));
        }
        let alpha = req.alpha.unwrap_or(self.config.fusion.alpha);
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ApiError::bad_request("BadAlpha", format!("alpha must be in [0, 1], got {alpha}")));
        }
        if req.query.trim().is_empty() {
            return Err(ApiError::bad_request("EmptyQuery", "query must not be empty"));
        }
        let cfg = FusionConfig {
            alpha,
            candidates: self.config.fusion.candidates.max(k),
            k,
        };
        let corpus = self.corpus.read().map_err(lock_poisoned)?;
        let mut results = match fused_search(&corpus, &req.query, &cfg) {
            Ok(r) => r,
            Err(FusionError::EmptyCorpus) => Vec::new(),
            Err(e @ FusionError::Embed(_)) => return Err(ApiError::new(502, "EmbedderUnavailable", e.to_string())),
            Err(e) => return Err(ApiError::internal(e)),
        };
        let reranked = req.rerank.unwrap_or(false);
        let mut degraded = false;
        if reranked {
            degraded = rerank_results(
                &corpus,
                &req.query,
                &mut results,
                self.models.reranker.as_ref(),
                self.config.llm.reranker.max_tokens,
            )
            .map_err(ApiError::internal)?;
        }
        Ok(SearchResponse {
            schema_version: SCHEMA_VERSION,
            query: req.query.clone(),
            k,
            alpha,
            reranked,
            rerank_degraded: degraded,
            results,
        })
    }

    /// Ingests one record. Frames and audio must be inline (`base64:`);
    /// a video id that is already indexed is left untouched.
    pub fn index_record(&self, line: ManifestLine) -> Result<(u16, Value), ApiError> {
        if line.video_id.is_empty() {
            return Err(ApiError::bad_request("InvalidRecord", "video_id must not be empty"));
        }
        let refs = line.frames.iter().chain(line.audio.iter());
        if let Some(r) = refs.into_iter().find(|r| !r.starts_with("base64:")) {
            return Err(ApiError::bad_request(
                "InvalidRecord",
                format!("only inline base64: payloads are accepted over HTTP, got {r:?}"),
            ));
        }
        let id = line.video_id.clone();
        let body = |status: &str| {
            json!({
                "schema_version": SCHEMA_VERSION,
                "video_id": id,
                "status": status,
            })
        };
        if self.corpus.read().map_err(lock_poisoned)?.document(&id).is_some() {
            return Ok((200, body("exists")));
        }
        let record = line
            .resolve(Path::new("."), self.transcriber.as_deref())
            .map_err(|e| ApiError::bad_request("InvalidRecord", e.to_string()))?;
        let mut corpus = self.corpus.write().map_err(lock_poisoned)?;
        match corpus.ingest_record(&record) {
            Ok(_) => {}
            // lost a race with an identical request
            Err(IngestError::AlreadyIndexed(_)) => return Ok((200, body("exists"))),
            Err(e @ (IngestError::EmptyRecord(_) | IngestError::InvalidRecord(_))) => {
                return Err(ApiError::bad_request("InvalidRecord", e.to_string()))
            }
            Err(e @ (IngestError::TranslationUnavailable { .. } | IngestError::Embed(_))) => {
                return Err(ApiError::new(502, "ProviderUnavailable", e.to_string()))
            }
            Err(e) => return Err(ApiError::internal(e)),
        }
        corpus.flush().map_err(ApiError::internal)?;
        Ok((201, body("indexed")))
    }

    pub fn video(&self, id: &str, embeddings: bool) -> Result<Value, ApiError> {
        let corpus = self.corpus.read().map_err(lock_poisoned)?;
        let doc = corpus
            .document(id)
            .ok_or_else(|| ApiError::new(404, "VideoNotFound", format!("no video {id:?}")))?;
        let mut v = serde_json::to_value(doc).map_err(ApiError::internal)?;
        let obj = v.as_object_mut().expect("document is an object");
        if !embeddings {
            obj.remove("vision");
            obj.remove("audio");
        }
        obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        Ok(v)
    }

    pub fn create_session(&self) -> Result<Value, ApiError> {
        let id = self.sessions.create();
        Ok(json!({ "schema_version": SCHEMA_VERSION, "session_id": id }))
    }

    pub fn session(&self, id: &str) -> Result<Value, ApiError> {
        let handle = self.sessions.get(id)?;
        let s = handle.lock().map_err(lock_poisoned)?;
        Ok(json!({
            "schema_version": SCHEMA_VERSION,
            "session_id": s.id,
            "history": s.history,
            "videos": s.videos,
            "selected_video_ids": s.selected,
        }))
    }

    /// Runs one agent turn. Turns on the same session are serialized by
    /// the session mutex.
    pub fn post_message(&self, id: &str, req: &MessageRequest) -> Result<MessageResponse, ApiError> {
        if req.text.trim().is_empty() {
            return Err(ApiError::bad_request("EmptyMessage", "text must not be empty"));
        }
        let handle = self.sessions.get(id)?;
        let mut session = handle.lock().map_err(lock_poisoned)?;
        let corpus = self.corpus.read().map_err(lock_poisoned)?;
        let orch = Orchestrator {
            corpus: &corpus,
            models: &self.models,
            config: &self.agent_config,
            clock: self.clock.as_ref(),
        };
        let outcome = orch.handle_turn(&mut session, &req.text, req.selected_video_ids.as_deref());
        // whatever was recorded before a failure is kept
        self.sessions.persist(&mut session)?;
        let outcome = outcome?;
        Ok(MessageResponse {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            route: outcome.route,
            assistant: outcome.assistant,
            videos: outcome.videos,
            degraded: outcome.degraded,
        })
    }

    /// Writes index files and any unpersisted session events.
    pub fn shutdown(&self) -> Result<(), ApiError> {
        self.sessions.persist_all()?;
        self.corpus.read().map_err(lock_poisoned)?.flush().map_err(ApiError::internal)
    }
}
