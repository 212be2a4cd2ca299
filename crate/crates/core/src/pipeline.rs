//! Query orchestration: embed the query, retrieve the top-k chunks, assemble
//! the prompt with session history, complete, and attach citations taken
//! from the retrieved chunks.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::index::{IndexEntry, IndexError, RetrieverConfig, SearchResult, VectorIndex};
use crate::ingest::Chunk;
use crate::llm::{complete, LlmConfig, LlmError};
use crate::prompt::{assemble, HistoryTurn, PromptConfig, PromptError, PromptLibrary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Embed,
    Retrieve,
    Assemble,
    Complete,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Assemble => "assemble",
            Stage::Complete => "complete",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("index is not loaded yet")]
    NotReady,
    #[error("embed stage: {0}")]
    Embed(#[from] EmbedError),
    #[error("retrieve stage: {0}")]
    Retrieve(#[from] IndexError),
    #[error("assemble stage: {0}")]
    Assemble(#[from] PromptError),
    #[error("complete stage: {0}")]
    Complete(#[from] LlmError),
    #[error("index references chunk {0:?} which is not in the corpus")]
    UnknownChunk(String),
    #[error("index has {index} entries but corpus has {corpus} chunks")]
    SizeMismatch { index: usize, corpus: usize },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Embed(_) => Some(Stage::Embed),
            Self::Retrieve(_) => Some(Stage::Retrieve),
            Self::Assemble(_) => Some(Stage::Assemble),
            Self::Complete(_) => Some(Stage::Complete),
            _ => None,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Corpus chunks plus the index over them. Immutable; updates build a new
/// one.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
    index: VectorIndex,
}

impl KnowledgeBase {
    /// Embeds every chunk's full text (citation line included).
    pub fn build(chunks: Vec<Chunk>, embedder: &dyn Embedder) -> Result<Self> {
        let entries = embed_entries(&chunks, embedder)?;
        let index = VectorIndex::build(entries, embedder.dim())?;
        Self::from_parts(chunks, index)
    }

    /// Pairs a loaded corpus with a loaded index, checking that they agree.
    pub fn from_parts(chunks: Vec<Chunk>, index: VectorIndex) -> Result<Self> {
        if chunks.len() != index.len() {
            return Err(PipelineError::SizeMismatch {
                index: index.len(),
                corpus: chunks.len(),
            });
        }
        let by_id: HashMap<String, usize> = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        if let Some(e) = index.entries().iter().find(|e| !by_id.contains_key(&e.chunk_id)) {
            return Err(PipelineError::UnknownChunk(e.chunk_id.clone()));
        }
        Ok(Self { chunks, by_id, index })
    }

    /// A new knowledge base with `added` appended; only the new chunks are
    /// embedded.
    pub fn with_added(&self, added: Vec<Chunk>, embedder: &dyn Embedder) -> Result<Self> {
        if added.is_empty() {
            return Ok(self.clone());
        }
        let mut entries = self.index.entries().to_vec();
        entries.extend(embed_entries(&added, embedder)?);
        let index = VectorIndex::build(entries, self.index.dim())?;
        let mut chunks = self.chunks.clone();
        chunks.extend(added);
        Self::from_parts(chunks, index)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn search(&self, query: &crate::embed::EmbeddingVector, cfg: &RetrieverConfig) -> Result<Vec<SearchResult>> {
        Ok(self.index.search(query, cfg)?)
    }
}

fn embed_entries(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<Vec<IndexEntry>> {
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    Ok(chunks
        .iter()
        .zip(vectors)
        .map(|(c, vector)| IndexEntry {
            chunk_id: c.chunk_id.clone(),
            vector,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub query: String,
    pub response: String,
    pub context_ids: Vec<String>,
    pub citations: Vec<String>,
    pub scores: Vec<f64>,
    pub prompt_words: usize,
    pub model_name: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl SessionTurn {
    pub fn to_record(&self) -> AnswerRecord {
        AnswerRecord {
            query: self.query.clone(),
            response_text: self.response.clone(),
            citations: self.citations.clone(),
            context_ids: self.context_ids.clone(),
            scores: self.scores.clone(),
            prompt_words: self.prompt_words,
            model_name: self.model_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub turns: Vec<SessionTurn>,
}

impl Session {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
        }
    }

    fn history(&self, last_n: usize) -> Vec<HistoryTurn> {
        let start = self.turns.len().saturating_sub(last_n);
        self.turns[start..]
            .iter()
            .map(|t| HistoryTurn {
                query: t.query.clone(),
                response: t.response.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query: String,
    pub response_text: String,
    /// Source strings of the retrieved chunks, in score order.
    pub citations: Vec<String>,
    pub context_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub prompt_words: usize,
    pub model_name: String,
}

/// Everything `answer` needs besides the knowledge base.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub retriever: RetrieverConfig,
    pub prompt: PromptConfig,
    pub llm: LlmConfig,
    pub library: PromptLibrary,
}

pub struct Pipeline {
    kb: RwLock<Option<Arc<KnowledgeBase>>>,
    embedder: Arc<dyn Embedder>,
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(embedder: Arc<dyn Embedder>, cfg: PipelineConfig) -> Self {
        Self {
            kb: RwLock::new(None),
            embedder,
            cfg,
        }
    }

    pub fn with_knowledge_base(self, kb: KnowledgeBase) -> Self {
        self.swap(kb);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// The current knowledge base, if loaded. Callers keep using the
    /// snapshot they got even if a swap happens meanwhile.
    pub fn knowledge_base(&self) -> Option<Arc<KnowledgeBase>> {
        self.kb.read().expect("kb lock").clone()
    }

    pub fn swap(&self, kb: KnowledgeBase) {
        *self.kb.write().expect("kb lock") = Some(Arc::new(kb));
    }

    /// Embeds and appends chunks, then swaps in the rebuilt index. Returns
    /// the new index size.
    pub fn add_chunks(&self, chunks: Vec<Chunk>) -> Result<usize> {
        // Writers are serialized on the lock; readers keep the old snapshot.
        let mut guard = self.kb.write().expect("kb lock");
        let current = guard.clone().ok_or(PipelineError::NotReady)?;
        let next = current.with_added(chunks, self.embedder.as_ref())?;
        let size = next.index().len();
        *guard = Some(Arc::new(next));
        Ok(size)
    }

    pub fn answer(&self, query: &str, session: &mut Session) -> Result<AnswerRecord> {
        let query = query.trim();
        if query.is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let kb = self.knowledge_base().ok_or(PipelineError::NotReady)?;

        let query_vec = self.embedder.embed_query(query)?;
        let hits = kb.search(&query_vec, &self.cfg.retriever)?;
        let contexts: Vec<Chunk> = hits
            .iter()
            .map(|h| {
                kb.chunk(&h.chunk_id)
                    .cloned()
                    .ok_or_else(|| PipelineError::UnknownChunk(h.chunk_id.clone()))
            })
            .collect::<Result<_>>()?;

        let template = self.cfg.library.template(&self.cfg.prompt.variant)?;
        let prompt = assemble(
            query,
            &contexts,
            &session.history(self.cfg.prompt.history_turns),
            template,
            &self.cfg.library.shots,
            self.cfg.prompt.budget_words,
        )?;
        let completion = complete(&prompt, &self.cfg.llm)?;

        let turn = SessionTurn {
            query: query.to_string(),
            response: completion.text,
            context_ids: hits.iter().map(|h| h.chunk_id.clone()).collect(),
            citations: contexts.iter().map(|c| c.source.clone()).collect(),
            scores: hits.iter().map(|h| h.score).collect(),
            prompt_words: prompt.estimated_words,
            model_name: self.cfg.llm.model_name.clone(),
            timestamp: now_millis(),
        };
        let record = turn.to_record();
        session.turns.push(turn);
        Ok(record)
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

/// In-memory sessions. Each session sits behind its own mutex so one
/// session handles one query at a time while different sessions proceed in
/// parallel. With a persistence directory, every turn is appended to
/// `{dir}/{session_id}.jsonl`.
#[derive(Default)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    persist_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(persist_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: Mutex::default(),
            persist_dir,
        }
    }

    pub fn create(&self) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        self.sessions
            .lock()
            .expect("session map")
            .insert(id.clone(), Arc::new(Mutex::new(Session::new(id.clone()))));
        id
    }

    pub fn get(&self, session_id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session map").get(session_id).cloned()
    }

    pub fn persist_turn(&self, session: &Session) -> std::io::Result<()> {
        let (Some(dir), Some(turn)) = (&self.persist_dir, session.turns.last()) else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{}.jsonl", session.session_id)))?;
        writeln!(file, "{}", serde_json::to_string(turn).expect("turn serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::LocalHashedEmbedder;
    use crate::ingest::{segment, RawDocument, RawSection, SegmenterConfig};

    fn corpus(bodies: &[&str]) -> Vec<Chunk> {
        let doc = RawDocument {
            spec_id: "TS 38.211".into(),
            title: "t".into(),
            sections: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| RawSection {
                    section_title: format!("4.{i}"),
                    paragraphs: vec![b.to_string()],
                })
                .collect(),
        };
        segment(&doc, &SegmenterConfig::default())
    }

    fn pipeline(chunks: Vec<Chunk>) -> Pipeline {
        let embedder: Arc<dyn Embedder> = Arc::new(LocalHashedEmbedder::new(384, true));
        let kb = KnowledgeBase::build(chunks, embedder.as_ref()).unwrap();
        Pipeline::new(embedder, PipelineConfig::default()).with_knowledge_base(kb)
    }

    #[test]
    fn single_chunk_corpus() {
        let p = pipeline(corpus(&["Numerology defines subcarrier spacing."]));
        let mut s = Session::new("s");
        let r = p.answer("what is numerology", &mut s).unwrap();
        assert!(r.response_text.contains("Numerology defines subcarrier spacing."));
        assert!(r.response_text.contains("Source: TS 38.211 4.0"));
        assert_eq!(r.citations, vec!["TS 38.211 4.0"]);
        assert_eq!(s.turns.len(), 1);
    }

    #[test]
    fn history_reaches_second_prompt() {
        let p = Pipeline::new(
            Arc::new(LocalHashedEmbedder::new(64, true)),
            PipelineConfig {
                llm: LlmConfig {
                    backend: crate::llm::LlmBackend::MockCanned,
                    canned_response: Some("canned".into()),
                    ..Default::default()
                },
                ..Default::default()
            },
        );
        let kb = KnowledgeBase::build(corpus(&["alpha", "beta"]), p.embedder()).unwrap();
        p.swap(kb);
        let mut s = Session::new("s");
        let first = p.answer("first question", &mut s).unwrap();
        let second = p.answer("second question", &mut s).unwrap();
        // system + 2 history messages + live: history adds "first question canned" (3 words).
        assert_eq!(second.prompt_words, first.prompt_words + 3);
        assert_eq!(s.history(3)[0].query, "first question");
    }

    #[test]
    fn not_ready_and_empty_query() {
        let p = Pipeline::new(Arc::new(LocalHashedEmbedder::new(8, true)), PipelineConfig::default());
        let mut s = Session::new("s");
        assert!(matches!(p.answer("q", &mut s), Err(PipelineError::NotReady)));
        assert!(matches!(p.answer("   ", &mut s), Err(PipelineError::EmptyQuery)));
    }

    #[test]
    fn add_chunks_grows_index() {
        let p = pipeline(corpus(&["alpha", "beta"]));
        let extra = corpus(&["x", "y", "z"]).into_iter().skip(2).map(|mut c| {
            c.chunk_id = format!("extra/{}", c.chunk_id);
            c
        });
        assert_eq!(p.add_chunks(extra.collect()).unwrap(), 3);
        let kb = p.knowledge_base().unwrap();
        assert_eq!(kb.chunks().len(), kb.index().len());
    }

    #[test]
    fn from_parts_checks_alignment() {
        let chunks = corpus(&["alpha", "beta"]);
        let kb = KnowledgeBase::build(chunks.clone(), &LocalHashedEmbedder::new(8, true)).unwrap();
        assert!(matches!(
            KnowledgeBase::from_parts(chunks[..1].to_vec(), kb.index().clone()),
            Err(PipelineError::SizeMismatch { .. })
        ));
        let mut renamed = chunks;
        renamed[1].chunk_id = "other".into();
        assert!(matches!(
            KnowledgeBase::from_parts(renamed, kb.index().clone()),
            Err(PipelineError::UnknownChunk(_))
        ));
    }

    #[test]
    fn session_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(Some(dir.path().to_path_buf()));
        let id = store.create();
        assert_ne!(id, store.create());
        let handle = store.get(&id).unwrap();
        let p = pipeline(corpus(&["alpha"]));
        let mut session = handle.lock().unwrap();
        p.answer("alpha", &mut session).unwrap();
        store.persist_turn(&session).unwrap();
        let text = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
