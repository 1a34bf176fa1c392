//! Application configuration: one TOML document, overridable through
//! `VAGENT_`-prefixed environment variables. Nested keys are joined with a
//! double underscore, e.g. `VAGENT_FUSION__ALPHA=0.3` or
//! `VAGENT_LLM__CHAT__MODEL=gpt-4o`.

use figment::providers::{Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;
use vagent_core::agents::{AgentConfig, CHAT_PROMPT_VERSION, ROUTE_PROMPT_VERSION, SUMMARY_PROMPT_VERSION};
use vagent_core::embed::EmbedderConfig;
use vagent_core::fusion::FusionConfig;
use vagent_core::index::IndexParams;
use vagent_core::ingest::{
    DictionaryTranslator, IdentityTranslator, IngestConfig, RemoteTranscriber, RemoteTranslator,
    Transcriber, Translator,
};
use vagent_core::llm::LlmSlot;
use vagent_core::rerank::RERANK_PROMPT_VERSION;

pub const ENV_PREFIX: &str = "VAGENT_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Load(#[from] Box<figment::Error>),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    #[default]
    Identity,
    Dictionary,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorConfig {
    pub kind: TranslatorKind,
    /// JSON word table for the dictionary translator.
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            kind: TranslatorKind::Identity,
            path: None,
            endpoint: None,
            timeout_ms: 10_000,
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrConfig {
    /// Transcription service; without one, manifest audio is ignored.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            timeout_ms: 60_000,
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSlots {
    pub router: LlmSlot,
    pub chat: LlmSlot,
    pub reranker: LlmSlot,
}

impl Default for LlmSlots {
    fn default() -> Self {
        Self {
            router: LlmSlot::with_model("gpt-4.1-mini"),
            chat: LlmSlot::with_model("gpt-4o"),
            reranker: LlmSlot::with_model("gpt-4o-mini"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub history_window: usize,
    pub summary_max_chars: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        let d = AgentConfig::default();
        Self {
            history_window: d.history_window,
            summary_max_chars: d.summary_max_chars,
        }
    }
}

/// Prompt template versions. Only the built-in versions exist; the section
/// is there so a deployment can pin them and fail fast on a mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptVersions {
    pub route: String,
    pub chat: String,
    pub summary: String,
    pub rerank: String,
}

impl Default for PromptVersions {
    fn default() -> Self {
        Self {
            route: ROUTE_PROMPT_VERSION.into(),
            chat: CHAT_PROMPT_VERSION.into(),
            summary: SUMMARY_PROMPT_VERSION.into(),
            rerank: RERANK_PROMPT_VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    pub embedder: EmbedderConfig,
    pub index: IndexParams,
    pub ingest: IngestConfig,
    pub fusion: FusionConfig,
    pub agents: AgentSettings,
    pub llm: LlmSlots,
    pub translator: TranslatorConfig,
    pub asr: AsrConfig,
    pub prompts: PromptVersions,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            bind: "127.0.0.1:8080".into(),
            embedder: EmbedderConfig::default(),
            index: IndexParams::default(),
            ingest: IngestConfig::default(),
            fusion: FusionConfig::default(),
            agents: AgentSettings::default(),
            llm: LlmSlots::default(),
            translator: TranslatorConfig::default(),
            asr: AsrConfig::default(),
            prompts: PromptVersions::default(),
        }
    }
}

impl AppConfig {
    /// Defaults, then `file` (when given), then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(file, std::env::vars())
    }

    /// As [`AppConfig::load`], with an explicit environment.
    pub fn load_with_env(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut fig = Figment::from(Serialized::defaults(AppConfig::default()));
        if let Some(path) = file {
            if !path.is_file() {
                return Err(ConfigError::Invalid(format!("config file {} not found", path.display())));
            }
            fig = fig.merge(Toml::file(path));
        }
        let mut vars: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                (!rest.is_empty()).then(|| (rest.to_lowercase().replace("__", "."), v))
            })
            .collect();
        vars.sort();
        for (key, raw) in vars {
            // same lenient parsing as figment's own Env provider
            let value: figment::value::Value = raw.parse().expect("value parsing is infallible");
            fig = fig.merge(Serialized::default(&key, value));
        }
        let cfg: AppConfig = fig.extract().map_err(|e| ConfigError::Load(Box::new(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.fusion.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.index.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.embedder.validate() {
            return bad(e.to_string());
        }
        if self.ingest.frames_per_video == 0 {
            return bad("ingest.frames_per_video must be >= 1".into());
        }
        if self.agents.history_window == 0 {
            return bad("agents.history_window must be >= 1".into());
        }
        if self.prompts != PromptVersions::default() {
            return bad(format!(
                "unsupported prompt versions {:?}; this build provides {:?}",
                self.prompts,
                PromptVersions::default()
            ));
        }
        if self.data_dir.exists() && !self.data_dir.is_dir() {
            return bad(format!("data_dir {} is not a directory", self.data_dir.display()));
        }
        for (name, slot) in [("router", &self.llm.router), ("chat", &self.llm.chat), ("reranker", &self.llm.reranker)] {
            if let Some(p) = &slot.script {
                if !p.is_file() {
                    return bad(format!("llm.{name}.script {} not found", p.display()));
                }
            }
        }
        match self.translator.kind {
            TranslatorKind::Dictionary => match &self.translator.path {
                Some(p) if p.is_file() => {}
                Some(p) => return bad(format!("translator.path {} not found", p.display())),
                None => return bad("dictionary translator requires translator.path".into()),
            },
            TranslatorKind::Remote if self.translator.endpoint.is_none() => {
                return bad("remote translator requires translator.endpoint".into())
            }
            _ => {}
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            fusion: self.fusion,
            history_window: self.agents.history_window,
            summary_max_chars: self.agents.summary_max_chars,
            max_tokens: self.llm.chat.max_tokens,
        }
    }

    pub fn build_translator(&self) -> Result<Arc<dyn Translator>, ConfigError> {
        let t = &self.translator;
        Ok(match t.kind {
            TranslatorKind::Identity => Arc::new(IdentityTranslator),
            TranslatorKind::Dictionary => {
                let path = t.path.as_deref().ok_or_else(|| ConfigError::Invalid("translator.path missing".into()))?;
                Arc::new(DictionaryTranslator::from_file(path).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
            TranslatorKind::Remote => {
                let ep = t.endpoint.as_deref().ok_or_else(|| ConfigError::Invalid("translator.endpoint missing".into()))?;
                Arc::new(RemoteTranslator::new(ep, Duration::from_millis(t.timeout_ms), t.retries))
            }
        })
    }

    pub fn build_transcriber(&self) -> Option<Box<dyn Transcriber>> {
        let a = &self.asr;
        a.endpoint.as_deref().map(|ep| {
            Box::new(RemoteTranscriber::new(ep, Duration::from_millis(a.timeout_ms), a.retries)) as Box<dyn Transcriber>
        })
    }
}
