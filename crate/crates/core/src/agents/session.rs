//! Event-sourced conversation state.
//!
//! A [`Session`] changes only by recording a [`SessionEvent`]; replaying
//! the event log from scratch rebuilds the same state. Logs persist as one
//! JSONL file per session.

use super::RouteTarget;
use crate::fusion::ScoredVideo;
use crate::rerank::RerankedVideo;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Starts at `start` and advances by `step` on every reading.
#[derive(Debug)]
pub struct StepClock {
    next: AtomicU64,
    step: u64,
}

impl StepClock {
    pub fn new(start: u64, step: u64) -> Self {
        Self {
            next: AtomicU64::new(start),
            step,
        }
    }
}

impl Clock for StepClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub summary: String,
}

/// One entry of the session's current result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionVideo {
    pub video_id: String,
    pub rank: usize,
    pub fused_rank: usize,
    pub vision_score: f64,
    pub audio_score: f64,
    pub fused_score: f64,
    pub transcription: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    UserMsg {
        ts: u64,
        text: String,
    },
    Selection {
        ts: u64,
        video_ids: Vec<String>,
    },
    Route {
        ts: u64,
        target: RouteTarget,
        raw: Option<String>,
        fallback_used: bool,
        prompt_version: String,
    },
    SearchResults {
        ts: u64,
        query: String,
        results: Vec<ScoredVideo>,
    },
    Rerank {
        ts: u64,
        videos: Vec<RerankedVideo>,
        degraded: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    Handoff {
        ts: u64,
        from: String,
        to: String,
        videos: usize,
    },
    AssistantMsg {
        ts: u64,
        text: String,
        degraded: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summaries: Option<Vec<VideoSummary>>,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Session {
    pub id: String,
    pub history: Vec<Message>,
    /// The current result list (re-ranked order).
    pub videos: Vec<SessionVideo>,
    pub selected: Vec<String>,
    pub last_route: Option<RouteTarget>,
    pub rerank_degraded: bool,
    pending_fused: Vec<ScoredVideo>,
    log: Vec<SessionEvent>,
    persisted: usize,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }

    pub fn replay(id: impl Into<String>, events: impl IntoIterator<Item = SessionEvent>) -> Self {
        let mut s = Self::new(id);
        for e in events {
            s.record(e);
        }
        s.persisted = s.log.len();
        s
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.log
    }

    pub fn has_videos(&self) -> bool {
        !self.videos.is_empty()
    }

    pub fn video(&self, id: &str) -> Option<&SessionVideo> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    /// Applies `event` to the state and appends it to the log.
    pub fn record(&mut self, event: SessionEvent) {
        match &event {
            SessionEvent::UserMsg { ts, text } => self.history.push(Message {
                role: Role::User,
                text: text.clone(),
                ts: *ts,
            }),
            SessionEvent::Selection { video_ids, .. } => self.selected = video_ids.clone(),
            SessionEvent::Route { target, .. } => self.last_route = Some(*target),
            SessionEvent::SearchResults { results, .. } => self.pending_fused = results.clone(),
            SessionEvent::Rerank {
                videos, degraded, ..
            } => {
                let fused = std::mem::take(&mut self.pending_fused);
                self.videos = videos
                    .iter()
                    .map(|v| {
                        let f = fused.iter().find(|f| f.video_id == v.video_id);
                        SessionVideo {
                            video_id: v.video_id.clone(),
                            rank: v.post_rank,
                            fused_rank: v.pre_rank,
                            vision_score: f.map_or(0.0, |f| f.vision_score),
                            audio_score: f.map_or(0.0, |f| f.audio_score),
                            fused_score: f.map_or(0.0, |f| f.fused_score),
                            transcription: v.transcription.clone(),
                            description: v.description.clone(),
                            summary: None,
                        }
                    })
                    .collect();
                // a new result list invalidates the old selection
                self.selected.clear();
                self.rerank_degraded = *degraded;
            }
            SessionEvent::Handoff { ts, from, to, videos } => self.history.push(Message {
                role: Role::System,
                text: format!("handoff: {from} -> {to} ({videos} videos)"),
                ts: *ts,
            }),
            SessionEvent::AssistantMsg {
                ts,
                text,
                summaries,
                ..
            } => {
                self.history.push(Message {
                    role: Role::Assistant,
                    text: text.clone(),
                    ts: *ts,
                });
                for s in summaries.iter().flatten() {
                    if let Some(v) = self.videos.iter_mut().find(|v| v.video_id == s.video_id) {
                        v.summary = Some(s.summary.clone());
                    }
                }
            }
        }
        self.log.push(event);
    }

    /// Events recorded since the last call.
    fn take_unpersisted(&mut self) -> &[SessionEvent] {
        let start = self.persisted;
        self.persisted = self.log.len();
        &self.log[start..]
    }

    /// The full log as JSONL.
    pub fn to_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

pub fn parse_event_log(text: &str) -> Result<Vec<SessionEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum SessionStoreError {
    #[error("unknown session: {0}")]
    UnknownSession(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {0} already exists")]
    Exists(String),
    #[error("bad session log {path}: {message}")]
    BadLog { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared map of sessions. Each session sits behind its own mutex so turns
/// within a session serialize while distinct sessions run concurrently.
#[derive(Debug, Default)]
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `*.jsonl` log under `dir`.
    pub fn open(dir: &Path) -> Result<Self, SessionStoreError> {
        fs::create_dir_all(dir)?;
        let mut map = HashMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let events = parse_event_log(&fs::read_to_string(&path)?).map_err(|e| {
                SessionStoreError::BadLog {
                    path: path.display().to_string(),
                    message: e.to_string(),
                }
            })?;
            map.insert(
                id.to_string(),
                Arc::new(Mutex::new(Session::replay(id, events))),
            );
        }
        let counter = AtomicU64::new(map.len() as u64);
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            sessions: Mutex::new(map),
            counter,
        })
    }

    pub fn create(&self) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::SeqCst);
            let id = format!("s{:x}{:06}", SystemClock.now_ms(), n);
            if self.create_with_id(&id).is_ok() {
                return id;
            }
        }
    }

    pub fn create_with_id(&self, id: &str) -> Result<(), SessionStoreError> {
        let safe = |c: char| c.is_ascii_alphanumeric() || c == '-' || c == '_';
        if id.is_empty() || id.len() > 128 || !id.chars().all(safe) {
            return Err(SessionStoreError::InvalidId(id.into()));
        }
        let mut map = self.sessions.lock().expect("session map poisoned");
        if map.contains_key(id) {
            return Err(SessionStoreError::Exists(id.into()));
        }
        if let Some(dir) = &self.dir {
            // an empty log keeps the session known across restarts
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(format!("{id}.jsonl")))?;
        }
        map.insert(id.to_string(), Arc::new(Mutex::new(Session::new(id))));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionStoreError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionStoreError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists every session with unwritten events.
    pub fn persist_all(&self) -> Result<(), SessionStoreError> {
        let all: Vec<Arc<Mutex<Session>>> = self
            .sessions
            .lock()
            .expect("session map poisoned")
            .values()
            .cloned()
            .collect();
        for s in all {
            self.persist(&mut s.lock().expect("session poisoned"))?;
        }
        Ok(())
    }

    /// Appends the session's new events to its log file.
    pub fn persist(&self, session: &mut Session) -> Result<(), SessionStoreError> {
        let events = session.take_unpersisted();
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("event serializes"));
            buf.push('\n');
        }
        let path = dir.join(format!("{}.jsonl", session.id));
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}
