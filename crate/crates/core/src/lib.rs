//! Retrieval-augmented question answering over technical specifications:
//! ingestion, embedding, exact vector search, prompt assembly, completion
//! backends, evaluation, expert feedback, and an HTTP service.

pub mod config;
pub mod embed;
pub mod eval;
pub mod feedback;
pub mod http;
pub mod index;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod service;
pub mod text;

pub use config::DefaultsSnapshot;
pub use embed::{build_embedder, EmbedBackend, EmbedError, Embedder, EmbedderConfig, EmbeddingVector};
pub use eval::{
    load_benchmark, run_ablation, run_benchmark, run_eval, AblationAxis, AblationOutcome, BenchmarkItem, EvalConfig,
    EvalError, EvalSetup, MetricReport,
};
pub use feedback::{ExpertDesk, ExpertRequest, FeedbackError, FeedbackLog, FeedbackRecord, IssuesConfig, Verdict};
pub use index::{IndexError, RetrieverConfig, SearchResult, VectorIndex};
pub use ingest::{
    Chunk, ChunkOrigin, CleanupRules, ExpertRegistry, IngestError, RawDocument, RawSection, SegmentStrategy,
    SegmenterConfig,
};
pub use llm::{LlmBackend, LlmConfig, LlmError};
pub use pipeline::{
    AnswerRecord, KnowledgeBase, Pipeline, PipelineConfig, PipelineError, Session, SessionStore, Stage,
};
pub use prompt::{PromptConfig, PromptLibrary, PromptTemplate};
pub use service::{ServiceConfig, ServiceError};
