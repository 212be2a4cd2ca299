//! JSON-over-HTTP front end for the pipeline, sessions, and feedback.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::embed::{build_embedder, Embedder, EmbedderConfig};
use crate::feedback::{
    request_contexts, ExpertDesk, FeedbackError, FeedbackLog, FeedbackRecord, IssuesConfig, Verdict,
};
use crate::index::{RetrieverConfig, VectorIndex};
use crate::ingest::{read_corpus, ExpertRegistry, SegmenterConfig};
use crate::llm::LlmConfig;
use crate::pipeline::{KnowledgeBase, Pipeline, PipelineConfig, PipelineError, SessionStore};
use crate::prompt::{PromptConfig, PromptLibrary};

pub const DEFAULT_DISCLAIMER: &str = "Answers are generated by a language model from retrieved \
specification text and may be incomplete or wrong. Check every answer against the cited sources. \
We do not recommend fully automated systems based solely on the outputs, and it is important that \
humans are still in the loop to correct any mistakes that the system may make.";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("startup: {0}")]
    Startup(String),
}

/// Keys of the `serve --config` TOML file. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind_address: String,
    pub port: u16,
    pub corpus_path: PathBuf,
    /// Prebuilt index; when absent the index is built from the corpus at
    /// startup.
    pub index_path: Option<PathBuf>,
    /// Holds `sessions/`, `requests/`, and `feedback.log`.
    pub data_dir: PathBuf,
    /// One expert id per line.
    pub experts_path: Option<PathBuf>,
    pub prompt_library_path: Option<PathBuf>,
    pub disclaimer_text: String,
    /// Allowed browser origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
    pub persist_sessions: bool,
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
    pub retriever: RetrieverConfig,
    pub prompt: PromptConfig,
    pub segmenter: SegmenterConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_address: "127.0.0.1".into(),
            port: 8080,
            corpus_path: PathBuf::from("corpus.jsonl"),
            index_path: None,
            data_dir: PathBuf::from("data"),
            experts_path: None,
            prompt_library_path: None,
            disclaimer_text: DEFAULT_DISCLAIMER.into(),
            cors_origins: vec!["*".into()],
            persist_sessions: true,
            embedder: EmbedderConfig::default(),
            llm: LlmConfig::default(),
            retriever: RetrieverConfig::default(),
            prompt: PromptConfig::default(),
            segmenter: SegmenterConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ServiceError> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        rebase(&mut cfg.corpus_path);
        rebase(&mut cfg.data_dir);
        for p in [&mut cfg.index_path, &mut cfg.experts_path, &mut cfg.prompt_library_path]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Applies the `EMBED_*` and `LLM_*` environment overrides.
    pub fn with_env(mut self) -> Self {
        self.embedder = self.embedder.with_env();
        self.llm = self.llm.with_env();
        self
    }

    /// Checks that every referenced file exists and module configs are sane.
    pub fn validate(&self) -> Result<(), ServiceError> {
        let files = std::iter::once(Some(&self.corpus_path))
            .chain([self.index_path.as_ref(), self.experts_path.as_ref(), self.prompt_library_path.as_ref()]);
        for path in files.flatten() {
            if !path.is_file() {
                return Err(ServiceError::Config(format!("{} does not exist", path.display())));
            }
        }
        if self.retriever.k == 0 {
            return Err(ServiceError::Config("retriever.k must be >= 1".into()));
        }
        self.embedder.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        self.llm.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        self.segmenter.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, ServiceError> {
        format!("{}:{}", self.bind_address, self.port)
            .parse()
            .map_err(|e| ServiceError::Config(format!("bind address: {e}")))
    }
}

/// Shared state behind every handler.
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub sessions: SessionStore,
    pub feedback: Mutex<FeedbackLog>,
    pub desk: ExpertDesk,
    pub disclaimer: String,
}

impl AppState {
    /// Builds the state without a knowledge base; health reports
    /// `starting` until [`load_knowledge_base`] swaps one in.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        cfg.validate()?;
        let startup = |e: &dyn std::fmt::Display| ServiceError::Startup(e.to_string());
        let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&cfg.embedder).map_err(|e| startup(&e))?);
        let library = match &cfg.prompt_library_path {
            Some(p) => PromptLibrary::load(p).map_err(|e| startup(&e))?,
            None => PromptLibrary::default(),
        };
        library.template(&cfg.prompt.variant).map_err(|e| startup(&e))?;
        let pipeline = Pipeline::new(
            embedder,
            PipelineConfig {
                retriever: cfg.retriever,
                prompt: cfg.prompt.clone(),
                llm: cfg.llm.clone(),
                library,
            },
        );
        let registry = match &cfg.experts_path {
            Some(p) => ExpertRegistry::load(p).map_err(|e| startup(&e))?,
            None => ExpertRegistry::default(),
        };
        let desk = ExpertDesk::new(cfg.data_dir.join("requests"), registry, cfg.segmenter.clone())
            .with_issues(IssuesConfig::from_env());
        std::fs::create_dir_all(&cfg.data_dir).map_err(|source| ServiceError::Io {
            path: cfg.data_dir.clone(),
            source,
        })?;
        let feedback = FeedbackLog::open(&cfg.data_dir.join("feedback.log")).map_err(|e| startup(&e))?;
        let sessions = SessionStore::new(cfg.persist_sessions.then(|| cfg.data_dir.join("sessions")));
        Ok(Arc::new(Self {
            pipeline: Arc::new(pipeline),
            sessions,
            feedback: Mutex::new(feedback),
            desk,
            disclaimer: cfg.disclaimer_text.clone(),
        }))
    }
}

/// Reads the corpus, loads or builds the index, and swaps the result in.
/// Blocking.
pub fn load_knowledge_base(cfg: &ServiceConfig, pipeline: &Pipeline) -> Result<usize, ServiceError> {
    let startup = |e: &dyn std::fmt::Display| ServiceError::Startup(e.to_string());
    let chunks = read_corpus(&cfg.corpus_path).map_err(|e| startup(&e))?;
    let kb = match &cfg.index_path {
        Some(p) => {
            let index = VectorIndex::load(p).map_err(|e| startup(&e))?;
            if index.dim() != pipeline.embedder().dim() {
                return Err(ServiceError::Startup(format!(
                    "index dimension {} does not match embedder dimension {}",
                    index.dim(),
                    pipeline.embedder().dim()
                )));
            }
            KnowledgeBase::from_parts(chunks, index)
        }
        None => KnowledgeBase::build(chunks, pipeline.embedder()),
    }
    .map_err(|e| startup(&e))?;
    let size = kb.index().len();
    pipeline.swap(kb);
    Ok(size)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: String,
    stage: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            stage: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.error });
        if let Some(stage) = self.stage {
            body["stage"] = json!(stage);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::EmptyQuery => StatusCode::BAD_REQUEST,
            PipelineError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::BAD_GATEWAY,
        };
        Self {
            status,
            error: e.to_string(),
            stage: e.stage().map(|s| s.to_string()),
        }
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        let status = match e {
            FeedbackError::UnknownTurn { .. } | FeedbackError::UnknownRequest(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub disclaimer: String,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<SessionCreated>, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    if !text.trim().is_empty() {
        match serde_json::from_str::<serde_json::Value>(text) {
            Ok(serde_json::Value::Object(m)) if m.is_empty() => {}
            _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "body must be empty or {}")),
        }
    }
    Ok(Json(SessionCreated {
        session_id: state.sessions.create(),
        disclaimer: state.disclaimer.clone(),
    }))
}

#[derive(Deserialize)]
struct QueryBody {
    session_id: String,
    query: String,
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryBody = parse_body(&body)?;
    let session = state
        .sessions
        .get(&req.session_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session_id)))?;
    if req.query.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "query is empty"));
    }
    let record = blocking(move || {
        // Holding the session lock for the whole answer serializes queries
        // within a session.
        let mut session = session.lock().expect("session lock");
        let record = state.pipeline.answer(&req.query, &mut session)?;
        if let Err(e) = state.sessions.persist_turn(&session) {
            tracing::warn!(error = %e, "could not persist session turn");
        }
        Ok(record)
    })
    .await?;
    Ok(Json(record).into_response())
}

#[derive(Deserialize)]
struct FeedbackBody {
    session_id: String,
    turn_index: usize,
    verdict: Verdict,
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Result<StatusCode, ApiError> {
    let req: FeedbackBody = parse_body(&body)?;
    let session = state
        .sessions
        .get(&req.session_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session_id)))?;
    let turns = session.lock().expect("session lock").turns.len();
    let rec = FeedbackRecord {
        session_id: req.session_id,
        turn_index: req.turn_index,
        verdict: req.verdict,
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or_default(),
    };
    tracing::info!(session = %rec.session_id, turn = rec.turn_index, verdict = ?rec.verdict, "feedback");
    state.feedback.lock().expect("feedback lock").record(rec, turns)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct ExpertRequestBody {
    session_id: String,
    turn_index: usize,
}

#[derive(Serialize, Deserialize)]
pub struct RequestCreated {
    pub request_id: String,
}

async fn expert_request(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<RequestCreated>, ApiError> {
    let req: ExpertRequestBody = parse_body(&body)?;
    let session = state
        .sessions
        .get(&req.session_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session_id)))?;
    let record = {
        let session = session.lock().expect("session lock");
        session.turns.get(req.turn_index).map(|t| t.to_record()).ok_or_else(|| {
            ApiError::from(FeedbackError::UnknownTurn {
                session_id: req.session_id.clone(),
                turn_index: req.turn_index,
            })
        })?
    };
    let kb = state
        .pipeline
        .knowledge_base()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service is starting"))?;
    let created = blocking(move || {
        let contexts = request_contexts(&record, &kb);
        Ok(state.desk.create(&record, contexts)?)
    })
    .await?;
    Ok(Json(RequestCreated {
        request_id: created.request_id,
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Health {
    pub status: String,
    pub corpus_chunks: usize,
    pub index_size: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(match state.pipeline.knowledge_base() {
        Some(kb) => Health {
            status: "ready".into(),
            corpus_chunks: kb.chunks().len(),
            index_size: kb.index().len(),
        },
        None => Health {
            status: "starting".into(),
            corpus_chunks: 0,
            index_size: 0,
        },
    })
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        layer.allow_origin(AllowOrigin::any())
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        layer.allow_origin(list)
    }
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/query", post(query))
        .route("/api/feedback", post(feedback))
        .route("/api/expert-request", post(expert_request))
        .route("/api/health", get(health))
        .with_state(state);
    if cors_origins.is_empty() {
        api
    } else {
        api.layer(cors(cors_origins))
    }
}

/// Binds, starts loading the index in the background, and serves until
/// the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::from_config(&cfg)?;
    let addr = cfg.socket_addr()?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Io {
        path: PathBuf::from(addr.to_string()),
        source,
    })?;
    tracing::info!(%addr, "listening");

    let pipeline = state.pipeline.clone();
    let load_cfg = cfg.clone();
    let loader = tokio::task::spawn_blocking(move || load_knowledge_base(&load_cfg, &pipeline));

    let app = router(state, &cfg.cors_origins);
    let server = tokio::spawn(async move { axum::serve(listener, app).await });

    match loader.await {
        Ok(Ok(size)) => tracing::info!(size, "index ready"),
        Ok(Err(e)) => return Err(e),
        Err(e) => return Err(ServiceError::Startup(e.to_string())),
    }
    server
        .await
        .map_err(|e| ServiceError::Startup(e.to_string()))?
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })
}
