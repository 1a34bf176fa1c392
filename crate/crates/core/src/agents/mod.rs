//! Routing, search and chat agents over a per-session state machine.
//!
//! Every user turn starts at the router. A `Search` decision runs fused
//! retrieval, re-ranks the top `k`, hands the list to the chat agent and
//! has it summarize each video. A `Chat` decision answers directly,
//! grounded in the user's selected videos when there are any.

mod session;

pub use session::{
    parse_event_log, Clock, Message, Role, Session, SessionEvent, SessionStore, SessionStoreError,
    SessionVideo, StepClock, SystemClock, VideoSummary,
};

use crate::fusion::{fused_search, FusionConfig, FusionError};
use crate::llm::LlmClient;
use crate::rerank::{rerank, RerankCandidate, RerankError, RerankRequest};
use crate::store::Corpus;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;

pub const ROUTE_PROMPT_VERSION: &str = "route-v1";
pub const CHAT_PROMPT_VERSION: &str = "chat-v1";
pub const SUMMARY_PROMPT_VERSION: &str = "summary-v1";

const APOLOGY: &str = "Sorry, I could not reach the chat model. Please try again.";
const NO_VIDEOS: &str = "There are no indexed videos to search yet.";

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("selected video {0} is not in the current results")]
    UnknownVideoSelected(String),
    #[error("{selected} videos selected, at most {k} allowed")]
    TooManySelected { selected: usize, k: usize },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteTarget {
    Search,
    Chat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub target: RouteTarget,
    /// Model output, absent when the call failed.
    pub raw: Option<String>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub fusion: FusionConfig,
    /// Past turns included in chat prompts.
    pub history_window: usize,
    pub summary_max_chars: usize,
    pub max_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            history_window: 10,
            summary_max_chars: 300,
            max_tokens: 512,
        }
    }
}

/// The model behind each agent.
#[derive(Clone)]
pub struct AgentModels {
    pub router: Arc<dyn LlmClient>,
    pub reranker: Arc<dyn LlmClient>,
    pub chat: Arc<dyn LlmClient>,
}

pub fn build_route_prompt(query: &str, session: &Session) -> String {
    let videos = if session.has_videos() {
        format!("yes ({} retrieved)", session.videos.len())
    } else {
        "no".to_string()
    };
    format!(
        "You are the routing agent of a video search assistant. Decide whether the user's \
         message needs a new video retrieval or can be answered in conversation.\n\
         Answer with exactly one word: SEARCH or CHAT.\n\n\
         Session has videos: {videos}\n\
         User: {query}\n\
         Answer:"
    )
}

/// Exact match after trimming, case-insensitive; anything else is Chat
/// with the fallback flag set.
pub fn parse_route(raw: &str) -> (RouteTarget, bool) {
    let t = raw.trim();
    if t.eq_ignore_ascii_case("search") {
        (RouteTarget::Search, false)
    } else if t.eq_ignore_ascii_case("chat") {
        (RouteTarget::Chat, false)
    } else {
        (RouteTarget::Chat, true)
    }
}

pub fn route(query: &str, session: &Session, llm: &dyn LlmClient, max_tokens: u32) -> RouteDecision {
    match llm.complete(&build_route_prompt(query, session), max_tokens) {
        Ok(raw) => {
            let (target, fallback_used) = parse_route(&raw);
            RouteDecision {
                target,
                raw: Some(raw),
                fallback_used,
            }
        }
        Err(e) => {
            tracing::warn!(error = %e, "router unavailable, falling back to chat");
            RouteDecision {
                target: RouteTarget::Chat,
                raw: None,
                fallback_used: true,
            }
        }
    }
}

fn video_block(id: &str, transcription: &str, description: &str) -> String {
    format!("video {id}: transcription: {transcription} | description: {description}")
}

pub fn build_summary_prompt(video: &SessionVideo) -> String {
    format!(
        "Summarize the following video in one or two sentences for a search result list.\n\n\
         {}\n\nSummary:",
        video_block(&video.video_id, &video.transcription, &video.description)
    )
}

/// Chat prompt: selected video blocks (if any), the last `window` user and
/// assistant turns before the current one, then the question.
pub fn build_chat_prompt(session: &Session, selected: &[&SessionVideo], query: &str, window: usize) -> String {
    let mut p = String::new();
    if selected.is_empty() {
        p.push_str("You are a helpful assistant in a conversation about videos.\n");
    } else {
        p.push_str(
            "You are a helpful assistant. Answer the user's question grounded in the provided \
             video contents.\n\nVideos:\n",
        );
        for v in selected {
            p.push_str(&video_block(&v.video_id, &v.transcription, &v.description));
            p.push('\n');
        }
    }
    // the current question is the last user message; it goes at the end
    let past = match session.history.last() {
        Some(m) if m.role == Role::User && m.text == query => &session.history[..session.history.len() - 1],
        _ => &session.history[..],
    };
    let turns: Vec<&Message> = past.iter().filter(|m| m.role != Role::System).collect();
    let turns = &turns[turns.len().saturating_sub(window)..];
    if !turns.is_empty() {
        p.push_str("\nConversation:\n");
        for m in turns {
            let role = if m.role == Role::User { "user" } else { "assistant" };
            let _ = writeln!(p, "{role}: {}", m.text);
        }
    }
    let _ = write!(p, "\nUser: {query}\nAssistant:");
    p
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub route: RouteTarget,
    pub assistant: String,
    /// The new result list, for search turns.
    pub videos: Option<Vec<SessionVideo>>,
    pub degraded: bool,
}

/// Runs turns against one corpus with one set of models.
pub struct Orchestrator<'a> {
    pub corpus: &'a Corpus,
    pub models: &'a AgentModels,
    pub config: &'a AgentConfig,
    pub clock: &'a dyn Clock,
}

impl Orchestrator<'_> {
    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Handles one user message. `selected` replaces the session's
    /// selection when given; it must be a subset of the current results.
    pub fn handle_turn(
        &self,
        session: &mut Session,
        text: &str,
        selected: Option<&[String]>,
    ) -> Result<TurnOutcome, AgentError> {
        if let Some(ids) = selected {
            self.check_selection(session, ids)?;
        }
        session.record(SessionEvent::UserMsg {
            ts: self.now(),
            text: text.to_string(),
        });
        if let Some(ids) = selected {
            let mut ids = ids.to_vec();
            ids.dedup();
            session.record(SessionEvent::Selection {
                ts: self.now(),
                video_ids: ids,
            });
        }
        let decision = route(text, session, self.models.router.as_ref(), self.config.max_tokens);
        session.record(SessionEvent::Route {
            ts: self.now(),
            target: decision.target,
            raw: decision.raw.clone(),
            fallback_used: decision.fallback_used,
            prompt_version: ROUTE_PROMPT_VERSION.into(),
        });
        match decision.target {
            RouteTarget::Search => self.run_search_phase(session, text),
            RouteTarget::Chat => {
                let ids = session.selected.clone();
                let (assistant, degraded) = self.chat_turn(session, text, &ids)?;
                Ok(TurnOutcome {
                    route: RouteTarget::Chat,
                    assistant,
                    videos: None,
                    degraded,
                })
            }
        }
    }

    fn check_selection(&self, session: &Session, ids: &[String]) -> Result<(), AgentError> {
        let k = self.config.fusion.k;
        if ids.len() > k {
            return Err(AgentError::TooManySelected {
                selected: ids.len(),
                k,
            });
        }
        match ids.iter().find(|id| session.video(id).is_none()) {
            Some(bad) => Err(AgentError::UnknownVideoSelected(bad.clone())),
            None => Ok(()),
        }
    }

    /// Fused retrieval, re-ranking, handoff and per-video summaries.
    pub fn run_search_phase(&self, session: &mut Session, query: &str) -> Result<TurnOutcome, AgentError> {
        let fused = match fused_search(self.corpus, query, &self.config.fusion) {
            Ok(list) => list,
            Err(FusionError::EmptyCorpus) => {
                session.record(SessionEvent::AssistantMsg {
                    ts: self.now(),
                    text: NO_VIDEOS.into(),
                    degraded: false,
                    summaries: None,
                });
                return Ok(TurnOutcome {
                    route: RouteTarget::Search,
                    assistant: NO_VIDEOS.into(),
                    videos: Some(Vec::new()),
                    degraded: false,
                });
            }
            Err(e) => return Err(e.into()),
        };
        session.record(SessionEvent::SearchResults {
            ts: self.now(),
            query: query.to_string(),
            results: fused.clone(),
        });
        let candidates: Vec<RerankCandidate> = fused
            .iter()
            .filter_map(|v| self.corpus.document(&v.video_id))
            .map(|d| RerankCandidate {
                video_id: d.video_id.clone(),
                transcription: d.transcription.clone(),
                description: d.description.clone(),
            })
            .collect();
        let outcome = rerank(
            &RerankRequest {
                query: query.to_string(),
                candidates,
            },
            self.models.reranker.as_ref(),
            self.config.max_tokens,
        )?;
        let n = outcome.videos.len();
        session.record(SessionEvent::Rerank {
            ts: self.now(),
            videos: outcome.videos,
            degraded: outcome.degraded,
            warning: outcome.warning,
        });
        session.record(SessionEvent::Handoff {
            ts: self.now(),
            from: "search".into(),
            to: "chat".into(),
            videos: n,
        });

        let mut degraded = false;
        let mut summaries = Vec::with_capacity(n);
        for v in &session.videos {
            let summary = match self
                .models
                .chat
                .complete(&build_summary_prompt(v), self.config.max_tokens)
            {
                Ok(s) => s.trim().to_string(),
                Err(e) => {
                    tracing::warn!(video = %v.video_id, error = %e, "summary unavailable");
                    degraded = true;
                    if v.description.is_empty() {
                        v.transcription.clone()
                    } else {
                        v.description.clone()
                    }
                }
            };
            summaries.push(VideoSummary {
                video_id: v.video_id.clone(),
                summary: truncate_chars(&summary, self.config.summary_max_chars),
            });
        }
        let mut text = format!("Found {n} videos for \"{query}\":");
        for (i, s) in summaries.iter().enumerate() {
            let _ = write!(text, "\n{}. {}: {}", i + 1, s.video_id, s.summary);
        }
        session.record(SessionEvent::AssistantMsg {
            ts: self.now(),
            text: text.clone(),
            degraded,
            summaries: Some(summaries),
        });
        Ok(TurnOutcome {
            route: RouteTarget::Search,
            assistant: text,
            videos: Some(session.videos.clone()),
            degraded: degraded || session.rerank_degraded,
        })
    }

    /// Answers `query`, grounded in `selected` (a subset of the session's
    /// results). Expects the user message to be recorded already.
    pub fn chat_turn(
        &self,
        session: &mut Session,
        query: &str,
        selected: &[String],
    ) -> Result<(String, bool), AgentError> {
        self.check_selection(session, selected)?;
        let videos: Vec<&SessionVideo> = selected
            .iter()
            .filter_map(|id| session.video(id))
            .collect();
        let prompt = build_chat_prompt(session, &videos, query, self.config.history_window);
        let (text, degraded) = match self.models.chat.complete(&prompt, self.config.max_tokens) {
            Ok(t) => (t, false),
            Err(e) => {
                tracing::warn!(error = %e, "chat model unavailable");
                (APOLOGY.to_string(), true)
            }
        };
        session.record(SessionEvent::AssistantMsg {
            ts: self.now(),
            text: text.clone(),
            degraded,
            summaries: None,
        });
        Ok((text, degraded))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_parsing() {
        assert_eq!(parse_route("SEARCH"), (RouteTarget::Search, false));
        assert_eq!(parse_route("chat\n"), (RouteTarget::Chat, false));
        assert_eq!(parse_route("  Search "), (RouteTarget::Search, false));
        assert_eq!(parse_route("I think maybe search?"), (RouteTarget::Chat, true));
        assert_eq!(parse_route(""), (RouteTarget::Chat, true));
    }

    #[test]
    fn chat_prompt_without_selection_has_no_video_block() {
        let mut s = Session::new("s");
        s.record(SessionEvent::UserMsg {
            ts: 1,
            text: "hi".into(),
        });
        let p = build_chat_prompt(&s, &[], "hi", 10);
        assert!(!p.lines().any(|l| l.starts_with("video ")));
        assert!(p.ends_with("User: hi\nAssistant:"));
        assert!(!p.contains("Conversation:"));
    }

    #[test]
    fn chat_prompt_history_window() {
        let mut s = Session::new("s");
        for i in 0..15 {
            s.record(SessionEvent::UserMsg {
                ts: i,
                text: format!("u{i}"),
            });
            s.record(SessionEvent::AssistantMsg {
                ts: i,
                text: format!("a{i}"),
                degraded: false,
                summaries: None,
            });
        }
        s.record(SessionEvent::UserMsg {
            ts: 99,
            text: "now".into(),
        });
        let p = build_chat_prompt(&s, &[], "now", 10);
        let convo: Vec<&str> = p
            .lines()
            .filter(|l| l.starts_with("user: ") || l.starts_with("assistant: "))
            .collect();
        assert_eq!(convo.len(), 10);
        assert_eq!(convo[0], "user: u10");
        assert_eq!(convo[9], "assistant: a14");
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("abc", 10), "abc");
    }
}
