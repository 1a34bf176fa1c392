//! LLM provider contract shared by the re-ranker and the agents.
//!
//! Two backends: [`ScriptedLlm`], a table-driven pure function of the
//! prompt used by every test, and [`RemoteLlm`], a client for
//! `POST /complete {"model","prompt","max_tokens"} -> {"text"}`.

use crate::remote::JsonClient;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, thiserror::Error)]
pub enum LlmError {
    #[error("LLM request timed out: {0}")]
    Timeout(String),
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
    #[error("LLM config: {0}")]
    Config(String),
}

pub trait LlmClient: Send + Sync {
    fn model(&self) -> &str;

    fn complete(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError>;
}

/// Hex SHA-256 of a prompt, the key used by hash rules in script files.
pub fn prompt_hash(prompt: &str) -> String {
    prompt_hash_bytes(prompt.as_bytes())
}

pub(crate) fn prompt_hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Sha256(String),
    Regex(Regex),
    Contains(String),
    Any,
}

impl Matcher {
    fn matches(&self, prompt: &str, hash: &str) -> bool {
        match self {
            Matcher::Sha256(h) => h.eq_ignore_ascii_case(hash),
            Matcher::Regex(re) => re.is_match(prompt),
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Text(String),
    /// Returns the prompt itself.
    Echo,
    Timeout,
    Fail(String),
}

impl Reply {
    fn produce(&self, prompt: &str) -> Result<String, LlmError> {
        match self {
            Reply::Text(t) => Ok(t.clone()),
            Reply::Echo => Ok(prompt.to_string()),
            Reply::Timeout => Err(LlmError::Timeout("scripted timeout".into())),
            Reply::Fail(msg) => Err(LlmError::Unavailable(msg.clone())),
        }
    }
}

/// One rule as it appears in a script file. Exactly one matcher key
/// (`sha256`, `regex`, `contains`; none means "any") and exactly one reply
/// key (`text`, `echo`, `timeout`, `fail`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub echo: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timeout: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSpec {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    /// Reply when no rule matches; without one, unmatched prompts fail.
    #[serde(default)]
    pub default: Option<RuleSpec>,
}

impl RuleSpec {
    fn compile(&self) -> Result<(Matcher, Reply), LlmError> {
        let matchers = [self.sha256.is_some(), self.regex.is_some(), self.contains.is_some()];
        if matchers.iter().filter(|&&m| m).count() > 1 {
            return Err(LlmError::Config("rule has more than one matcher".into()));
        }
        let matcher = if let Some(h) = &self.sha256 {
            Matcher::Sha256(h.clone())
        } else if let Some(re) = &self.regex {
            Matcher::Regex(Regex::new(re).map_err(|e| LlmError::Config(e.to_string()))?)
        } else if let Some(s) = &self.contains {
            Matcher::Contains(s.clone())
        } else {
            Matcher::Any
        };
        let replies = [
            self.text.is_some(),
            self.echo,
            self.timeout,
            self.fail.is_some(),
        ];
        if replies.iter().filter(|&&r| r).count() != 1 {
            return Err(LlmError::Config("rule needs exactly one reply".into()));
        }
        let reply = if let Some(t) = &self.text {
            Reply::Text(t.clone())
        } else if self.echo {
            Reply::Echo
        } else if self.timeout {
            Reply::Timeout
        } else {
            Reply::Fail(self.fail.clone().unwrap_or_default())
        };
        Ok((matcher, reply))
    }
}

/// Table-driven backend: the first matching rule answers.
#[derive(Debug, Clone)]
pub struct ScriptedLlm {
    model: String,
    rules: Vec<(Matcher, Reply)>,
    fallback: Option<Reply>,
}

impl ScriptedLlm {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            rules: Vec::new(),
            fallback: None,
        }
    }

    /// Always answers with `reply`.
    pub fn constant(reply: Reply) -> Self {
        Self::new("scripted").with_default(reply)
    }

    pub fn echo() -> Self {
        Self::constant(Reply::Echo)
    }

    pub fn rule(mut self, matcher: Matcher, reply: Reply) -> Self {
        self.rules.push((matcher, reply));
        self
    }

    pub fn with_default(mut self, reply: Reply) -> Self {
        self.fallback = Some(reply);
        self
    }

    pub fn from_spec(spec: &ScriptSpec) -> Result<Self, LlmError> {
        let mut llm = Self::new(spec.model.clone().unwrap_or_else(|| "scripted".into()));
        for rule in &spec.rules {
            llm.rules.push(rule.compile()?);
        }
        if let Some(d) = &spec.default {
            llm.fallback = Some(d.compile()?.1);
        }
        Ok(llm)
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let spec: ScriptSpec = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_spec(&spec)
    }
}

impl LlmClient for ScriptedLlm {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, _max_tokens: u32) -> Result<String, LlmError> {
        let hash = prompt_hash(prompt);
        self.rules
            .iter()
            .find(|(m, _)| m.matches(prompt, &hash))
            .map(|(_, r)| r)
            .or(self.fallback.as_ref())
            .ok_or_else(|| LlmError::Unavailable("no scripted reply for prompt".into()))?
            .produce(prompt)
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

#[derive(Debug, Clone)]
pub struct RemoteLlm {
    client: JsonClient,
    model: String,
}

impl RemoteLlm {
    pub fn new(endpoint: &str, model: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            client: JsonClient::new(endpoint, timeout, retries),
            model: model.into(),
        }
    }
}

impl LlmClient for RemoteLlm {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        let req = CompleteRequest {
            model: &self.model,
            prompt,
            max_tokens,
        };
        let resp: CompleteResponse = self
            .client
            .post("/complete", &req)
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackend {
    #[default]
    Scripted,
    Remote,
}

/// Configuration for one agent's model slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSlot {
    pub backend: LlmBackend,
    pub model: String,
    pub endpoint: Option<String>,
    /// Script table for the scripted backend; absent means echo.
    pub script: Option<PathBuf>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_tokens: u32,
}

impl Default for LlmSlot {
    fn default() -> Self {
        Self {
            backend: LlmBackend::Scripted,
            model: "gpt-4o-mini".into(),
            endpoint: None,
            script: None,
            timeout_ms: 30_000,
            retries: 1,
            max_tokens: 512,
        }
    }
}

impl LlmSlot {
    pub fn with_model(model: &str) -> Self {
        Self {
            model: model.into(),
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LlmClient>, LlmError> {
        Ok(match self.backend {
            LlmBackend::Scripted => match &self.script {
                Some(path) => Arc::new(ScriptedLlm::from_file(path)?),
                None => Arc::new(ScriptedLlm::echo()),
            },
            LlmBackend::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| LlmError::Config("remote LLM slot requires an endpoint".into()))?;
                Arc::new(RemoteLlm::new(
                    endpoint,
                    self.model.clone(),
                    Duration::from_millis(self.timeout_ms),
                    self.retries,
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let llm = ScriptedLlm::new("t")
            .rule(Matcher::Contains("alpha".into()), Reply::Text("A".into()))
            .rule(Matcher::Regex(Regex::new("^al").unwrap()), Reply::Text("B".into()))
            .with_default(Reply::Text("D".into()));
        assert_eq!(llm.complete("alpha", 10).unwrap(), "A");
        assert_eq!(llm.complete("algebra", 10).unwrap(), "B");
        assert_eq!(llm.complete("zzz", 10).unwrap(), "D");
    }

    #[test]
    fn hash_rules_and_failures() {
        let llm = ScriptedLlm::new("t")
            .rule(Matcher::Sha256(prompt_hash("exact")), Reply::Text("hit".into()))
            .rule(Matcher::Contains("slow".into()), Reply::Timeout);
        assert_eq!(llm.complete("exact", 1).unwrap(), "hit");
        assert!(matches!(llm.complete("slow", 1), Err(LlmError::Timeout(_))));
        assert!(matches!(llm.complete("other", 1), Err(LlmError::Unavailable(_))));
    }

    #[test]
    fn script_spec_parsing() {
        let spec: ScriptSpec = serde_json::from_str(
            r#"{"rules":[{"regex":"SEARCH or CHAT","text":"SEARCH"},{"contains":"x","echo":true}],
                "default":{"fail":"nope"}}"#,
        )
        .unwrap();
        let llm = ScriptedLlm::from_spec(&spec).unwrap();
        assert_eq!(llm.complete("answer SEARCH or CHAT", 1).unwrap(), "SEARCH");
        assert_eq!(llm.complete("xyz", 1).unwrap(), "xyz");
        assert!(llm.complete("q", 1).is_err());

        let bad: ScriptSpec = serde_json::from_str(r#"{"rules":[{"text":"a","echo":true}]}"#).unwrap();
        assert!(ScriptedLlm::from_spec(&bad).is_err());
    }

    #[test]
    fn prompt_hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
