//! Like/dislike feedback and the expert-request loop.
//!
//! Expert requests are written to a local queue directory first
//! (`requests/{id}.json`) and mirrored to an issue tracker when one is
//! configured. The local queue is the source of truth until a sync succeeds.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{post_json, HttpError, RetryPolicy};
use crate::ingest::{add_expert_chunk, Chunk, ExpertRegistry, IngestError, SegmenterConfig};
use crate::pipeline::{AnswerRecord, KnowledgeBase, Pipeline};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("session {session_id} has no turn {turn_index}")]
    UnknownTurn { session_id: String, turn_index: usize },
    #[error("unknown expert request {0:?}")]
    UnknownRequest(String),
    #[error("expert request {0:?} already resolved")]
    AlreadyResolved(String),
    #[error("expert {0:?} is not authorized to resolve requests")]
    Unauthorized(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("could not add expert chunks to the corpus: {0}")]
    Sink(String),
    #[error("issue tracker: {0}")]
    Issues(HttpError),
    #[error("feedback io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = FeedbackError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeedbackError + '_ {
    move |source| FeedbackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Like,
    Dislike,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub session_id: String,
    pub turn_index: usize,
    pub verdict: Verdict,
    pub timestamp: u64,
}

/// Verdicts keyed by (session, turn); a later verdict for the same turn
/// replaces the earlier one. Every record is also appended to the log file
/// when one is configured, and replaying the file restores the same state.
#[derive(Debug, Default)]
pub struct FeedbackLog {
    path: Option<PathBuf>,
    verdicts: BTreeMap<(String, usize), FeedbackRecord>,
}

impl FeedbackLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut log = Self {
            path: Some(path.to_path_buf()),
            verdicts: BTreeMap::new(),
        };
        if path.exists() {
            let file = fs::File::open(path).map_err(io_err(path))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: FeedbackRecord = serde_json::from_str(&line).map_err(|source| FeedbackError::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
                log.verdicts.insert((rec.session_id.clone(), rec.turn_index), rec);
            }
        }
        Ok(log)
    }

    /// `session_turns` is the number of turns the session currently has.
    pub fn record(&mut self, rec: FeedbackRecord, session_turns: usize) -> Result<()> {
        if rec.turn_index >= session_turns {
            return Err(FeedbackError::UnknownTurn {
                session_id: rec.session_id,
                turn_index: rec.turn_index,
            });
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?;
            writeln!(file, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(io_err(path))?;
        }
        self.verdicts.insert((rec.session_id.clone(), rec.turn_index), rec);
        Ok(())
    }

    pub fn verdict(&self, session_id: &str, turn_index: usize) -> Option<Verdict> {
        self.verdicts
            .get(&(session_id.to_string(), turn_index))
            .map(|r| r.verdict)
    }

    /// Number of turns with a verdict.
    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Open,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRequest {
    pub request_id: String,
    pub query: String,
    pub context: Vec<RequestContext>,
    pub response: String,
    pub status: RequestStatus,
    pub resolver_expert_id: Option<String>,
    pub resolution_text: Option<String>,
    /// Set while the issue tracker has not acknowledged this request.
    #[serde(default)]
    pub pending_sync: bool,
    #[serde(default)]
    pub issue_number: Option<u64>,
}

impl ExpertRequest {
    /// Markdown issue body with `## Query`, `## Context`, and `## Response`
    /// sections; each context entry ends with its `Source:` line.
    pub fn issue_body(&self) -> String {
        let mut body = format!("## Query\n{}\n\n## Context\n", self.query);
        for ctx in &self.context {
            body.push_str(&format!("{}\n{}{}\n\n", ctx.text, crate::ingest::SOURCE_PREFIX, ctx.source));
        }
        body.push_str(&format!("## Response\n{}\n", self.response));
        body
    }

    pub fn issue_title(&self) -> String {
        let mut q: String = self.query.chars().take(80).collect();
        if q.len() < self.query.len() {
            q.push_str("...");
        }
        format!("Expert request: {q}")
    }
}

/// Resolves the retrieved chunks of a turn into issue context entries.
pub fn request_contexts(turn: &AnswerRecord, kb: &KnowledgeBase) -> Vec<RequestContext> {
    turn.context_ids
        .iter()
        .zip(&turn.citations)
        .map(|(id, citation)| match kb.chunk(id) {
            Some(chunk) => RequestContext {
                text: chunk.body().to_string(),
                source: chunk.source.clone(),
            },
            None => RequestContext {
                text: String::new(),
                source: citation.clone(),
            },
        })
        .collect()
}

/// Destination for expert-contributed chunks.
pub trait CorpusSink {
    /// Appends the chunks and rebuilds the index; returns the new index size.
    fn add_chunks(&self, chunks: Vec<Chunk>) -> Result<usize>;
}

impl CorpusSink for Pipeline {
    fn add_chunks(&self, chunks: Vec<Chunk>) -> Result<usize> {
        Pipeline::add_chunks(self, chunks).map_err(|e| FeedbackError::Sink(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuesConfig {
    pub url: String,
    pub token: Option<String>,
    pub max_retries: u32,
    pub retry_base: Duration,
    pub timeout: Duration,
}

impl IssuesConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            max_retries: 3,
            retry_base: Duration::from_secs(1),
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads `ISSUES_API_URL` and `ISSUES_TOKEN`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("ISSUES_API_URL").ok()?;
        Some(Self {
            token: std::env::var("ISSUES_TOKEN").ok(),
            ..Self::new(url)
        })
    }

    fn post(&self, req: &ExpertRequest) -> Result<u64> {
        let policy = RetryPolicy {
            max_retries: self.max_retries,
            base_delay: self.retry_base,
            timeout: self.timeout,
        };
        let body = json!({ "title": req.issue_title(), "body": req.issue_body() });
        let response = post_json(&self.url, self.token.as_deref(), &body, &policy).map_err(FeedbackError::Issues)?;
        response
            .body
            .get("number")
            .and_then(|n| n.as_u64())
            .ok_or_else(|| FeedbackError::Issues(HttpError::Protocol("issue response lacks a numeric \"number\"".into())))
    }
}

pub struct ExpertDesk {
    queue_dir: PathBuf,
    issues: Option<IssuesConfig>,
    registry: ExpertRegistry,
    segmenter: SegmenterConfig,
}

impl ExpertDesk {
    pub fn new(queue_dir: impl Into<PathBuf>, registry: ExpertRegistry, segmenter: SegmenterConfig) -> Self {
        Self {
            queue_dir: queue_dir.into(),
            issues: None,
            registry,
            segmenter,
        }
    }

    pub fn with_issues(mut self, issues: Option<IssuesConfig>) -> Self {
        self.issues = issues;
        self
    }

    fn path_for(&self, request_id: &str) -> PathBuf {
        self.queue_dir.join(format!("{request_id}.json"))
    }

    fn save(&self, req: &ExpertRequest) -> Result<()> {
        fs::create_dir_all(&self.queue_dir).map_err(io_err(&self.queue_dir))?;
        let path = self.path_for(&req.request_id);
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_string_pretty(req).expect("request serializes");
        fs::write(&tmp, json).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn load(&self, request_id: &str) -> Result<ExpertRequest> {
        let valid_id = !request_id.is_empty() && request_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self.path_for(request_id);
        if !valid_id || !path.exists() {
            return Err(FeedbackError::UnknownRequest(request_id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| FeedbackError::Json { path, source })
    }

    /// Persists a new open request for `turn`. With an issue tracker, the
    /// issue number becomes the request id; if posting fails the request is
    /// kept locally under a UUID and flagged for a later sync.
    pub fn create(&self, turn: &AnswerRecord, context: Vec<RequestContext>) -> Result<ExpertRequest> {
        let mut req = ExpertRequest {
            request_id: uuid::Uuid::new_v4().to_string(),
            query: turn.query.clone(),
            context,
            response: turn.response_text.clone(),
            status: RequestStatus::Open,
            resolver_expert_id: None,
            resolution_text: None,
            pending_sync: false,
            issue_number: None,
        };
        if let Some(issues) = &self.issues {
            match issues.post(&req) {
                Ok(number) => {
                    req.request_id = number.to_string();
                    req.issue_number = Some(number);
                }
                Err(e) => {
                    tracing::warn!(error = %e, "issue creation failed; keeping request locally");
                    req.pending_sync = true;
                }
            }
        }
        self.save(&req)?;
        Ok(req)
    }

    /// Retries issue creation for every pending request. Returns how many
    /// were synced.
    pub fn sync_pending(&self) -> Result<usize> {
        let Some(issues) = &self.issues else {
            return Ok(0);
        };
        let mut synced = 0;
        for mut req in self.list()? {
            if !req.pending_sync {
                continue;
            }
            match issues.post(&req) {
                Ok(number) => {
                    req.issue_number = Some(number);
                    req.pending_sync = false;
                    self.save(&req)?;
                    synced += 1;
                }
                Err(e) => tracing::warn!(request = %req.request_id, error = %e, "sync failed"),
            }
        }
        Ok(synced)
    }

    pub fn list(&self) -> Result<Vec<ExpertRequest>> {
        if !self.queue_dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.queue_dir)
            .map_err(io_err(&self.queue_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                serde_json::from_str(&text).map_err(|source| FeedbackError::Json { path, source })
            })
            .collect()
    }

    /// Turns an expert's resolution into attributed chunks, hands them to
    /// `sink`, and marks the request resolved.
    pub fn resolve(
        &self,
        request_id: &str,
        expert_id: &str,
        resolution_text: &str,
        sink: &dyn CorpusSink,
    ) -> Result<Vec<Chunk>> {
        let mut req = self.load(request_id)?;
        if req.status == RequestStatus::Resolved {
            return Err(FeedbackError::AlreadyResolved(request_id.to_string()));
        }
        if !self.registry.contains(expert_id) {
            return Err(FeedbackError::Unauthorized(expert_id.to_string()));
        }
        let chunks = add_expert_chunk(resolution_text, expert_id, &self.registry, &self.segmenter)?;
        sink.add_chunks(chunks.clone())?;
        req.status = RequestStatus::Resolved;
        req.resolver_expert_id = Some(expert_id.to_string());
        req.resolution_text = Some(resolution_text.to_string());
        self.save(&req)?;
        Ok(chunks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn rec(session: &str, turn: usize, verdict: Verdict) -> FeedbackRecord {
        FeedbackRecord {
            session_id: session.into(),
            turn_index: turn,
            verdict,
            timestamp: 0,
        }
    }

    #[test]
    fn later_verdict_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feedback.log");
        let mut log = FeedbackLog::open(&path).unwrap();
        log.record(rec("s", 0, Verdict::Like), 1).unwrap();
        log.record(rec("s", 0, Verdict::Dislike), 1).unwrap();
        assert_eq!(log.verdict("s", 0), Some(Verdict::Dislike));
        assert_eq!(log.len(), 1);
        let replayed = FeedbackLog::open(&path).unwrap();
        assert_eq!(replayed.verdict("s", 0), Some(Verdict::Dislike));
    }

    #[test]
    fn unknown_turn_rejected() {
        let mut log = FeedbackLog::in_memory();
        assert!(matches!(
            log.record(rec("s", 99, Verdict::Like), 2),
            Err(FeedbackError::UnknownTurn { turn_index: 99, .. })
        ));
        assert!(log.is_empty());
    }

    #[test]
    fn two_turns_two_entries() {
        let mut log = FeedbackLog::in_memory();
        log.record(rec("s", 0, Verdict::Like), 2).unwrap();
        log.record(rec("s", 1, Verdict::Like), 2).unwrap();
        assert_eq!(log.len(), 2);
    }

    fn turn() -> AnswerRecord {
        AnswerRecord {
            query: "what is numerology".into(),
            response_text: "It is about spacing.".into(),
            citations: vec!["TS 38.211 4.1".into(), "TS 38.300 5.2".into()],
            context_ids: vec!["a".into(), "b".into()],
            scores: vec![0.9, 0.5],
            prompt_words: 10,
            model_name: "m".into(),
        }
    }

    fn contexts() -> Vec<RequestContext> {
        vec![
            RequestContext { text: "Numerology is mu.".into(), source: "TS 38.211 4.1".into() },
            RequestContext { text: "Spacing is 15 kHz times 2^mu.".into(), source: "TS 38.300 5.2".into() },
        ]
    }

    #[test]
    fn offline_request_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let desk = ExpertDesk::new(dir.path().join("requests"), ExpertRegistry::default(), SegmenterConfig::default());
        let req = desk.create(&turn(), contexts()).unwrap();
        assert_eq!(req.status, RequestStatus::Open);
        assert!(!req.pending_sync);
        assert!(uuid::Uuid::parse_str(&req.request_id).is_ok());
        assert!(dir.path().join("requests").join(format!("{}.json", req.request_id)).exists());
        assert_eq!(desk.load(&req.request_id).unwrap(), req);
        assert!(matches!(desk.load("../etc"), Err(FeedbackError::UnknownRequest(_))));
    }

    #[test]
    fn issue_body_sections() {
        let req = ExpertRequest {
            request_id: "1".into(),
            query: turn().query,
            context: contexts(),
            response: turn().response_text,
            status: RequestStatus::Open,
            resolver_expert_id: None,
            resolution_text: None,
            pending_sync: false,
            issue_number: None,
        };
        let body = req.issue_body();
        let ctx = body.split("## Context\n").nth(1).unwrap().split("## Response").next().unwrap();
        assert_eq!(ctx.lines().filter(|l| l.starts_with("Source: ")).count(), 2);
        assert!(body.starts_with("## Query\nwhat is numerology\n"));
        assert!(body.ends_with("## Response\nIt is about spacing.\n"));
    }

    struct Recorder(RefCell<Vec<Chunk>>);

    impl CorpusSink for Recorder {
        fn add_chunks(&self, chunks: Vec<Chunk>) -> Result<usize> {
            self.0.borrow_mut().extend(chunks);
            Ok(self.0.borrow().len())
        }
    }

    #[test]
    fn resolve_state_machine() {
        let dir = tempfile::tempdir().unwrap();
        let desk = ExpertDesk::new(dir.path(), ExpertRegistry::new(["expert-7"]), SegmenterConfig::default());
        let req = desk.create(&turn(), contexts()).unwrap();
        let sink = Recorder(RefCell::new(Vec::new()));
        let text = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");

        assert!(matches!(
            desk.resolve(&req.request_id, "intruder", &text, &sink),
            Err(FeedbackError::Unauthorized(_))
        ));
        assert!(matches!(desk.resolve("nope", "expert-7", &text, &sink), Err(FeedbackError::UnknownRequest(_))));

        let chunks = desk.resolve(&req.request_id, "expert-7", &text, &sink).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(sink.0.borrow().len(), 1);
        let stored = desk.load(&req.request_id).unwrap();
        assert_eq!(stored.status, RequestStatus::Resolved);
        assert_eq!(stored.resolver_expert_id.as_deref(), Some("expert-7"));

        assert!(matches!(
            desk.resolve(&req.request_id, "expert-7", &text, &sink),
            Err(FeedbackError::AlreadyResolved(_))
        ));
    }
}
