use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use specsynth_core::feedback::CorpusSink;
use specsynth_core::ingest::{ingest_dir, load_documents, read_corpus, write_corpus};
use specsynth_core::{
    build_embedder, load_benchmark, run_ablation, run_benchmark, AblationAxis, Chunk, CleanupRules, EmbedBackend,
    Embedder, EmbedderConfig, EvalConfig, EvalSetup, ExpertDesk, ExpertRegistry, IssuesConfig, KnowledgeBase,
    LlmBackend, LlmConfig, Pipeline, PipelineConfig, PromptConfig, PromptLibrary, RetrieverConfig, SegmentStrategy,
    SegmenterConfig, ServiceConfig, Session, VectorIndex,
};

#[derive(Parser)]
#[command(name = "specsynth", version, about = "Question answering over technical specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract, clean, and segment a directory of specifications into a corpus file.
    Ingest(IngestArgs),
    /// Embed a corpus and write the vector index.
    Index(IndexArgs),
    /// Answer one question against a corpus and index.
    Query(QueryArgs),
    /// Score a benchmark and write a metric report.
    Eval(EvalArgs),
    /// Run the benchmark once per value of one setting.
    Ablate(AblateArgs),
    /// Apply an expert's answer to a request and rebuild the index.
    Resolve(ResolveArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long, default_value_t = 360)]
    n_words: usize,
    #[arg(long, default_value = "section_aware")]
    strategy: SegmentStrategy,
    /// Window size for the fixed_overlap strategy.
    #[arg(long, default_value_t = 1000)]
    chunk_words: usize,
    /// Words shared by consecutive fixed_overlap windows.
    #[arg(long, default_value_t = 100)]
    overlap_words: usize,
}

impl SegmentArgs {
    fn config(&self) -> Result<SegmenterConfig> {
        let cfg = SegmenterConfig {
            n_words: self.n_words,
            strategy: self.strategy,
            fixed_chunk_words: self.chunk_words,
            fixed_overlap_words: self.overlap_words,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    #[value(name = "local_hashed", alias = "local-hashed")]
    LocalHashed,
    Remote,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "local_hashed")]
    embedder: EmbedderKind,
    /// Vector dimension; for an existing index the index's dimension wins.
    #[arg(long)]
    dim: Option<usize>,
    /// Model name sent to a remote embeddings endpoint.
    #[arg(long)]
    embed_model: Option<String>,
}

impl EmbedArgs {
    fn config(&self, index_dim: Option<usize>) -> Result<EmbedderConfig> {
        let mut cfg = EmbedderConfig::default().with_env();
        cfg.backend = match self.embedder {
            EmbedderKind::LocalHashed => EmbedBackend::LocalHashed,
            EmbedderKind::Remote => EmbedBackend::RemoteHttp,
        };
        if let (Some(flag), Some(index)) = (self.dim, index_dim) {
            if flag != index {
                bail!("--dim {flag} does not match the index dimension {index}");
            }
        }
        if let Some(dim) = index_dim.or(self.dim) {
            cfg.dim = dim;
        }
        if self.embed_model.is_some() {
            cfg.model_name = self.embed_model.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "gpt-4")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1000)]
    max_output_tokens: u32,
    /// remote_http, mock_echo_context, or mock_canned.
    #[arg(long, default_value = "mock_echo_context")]
    llm_backend: LlmBackend,
    /// Reply of the mock_canned backend.
    #[arg(long)]
    canned_response: Option<String>,
    #[arg(long, default_value = "default")]
    prompt_variant: String,
    /// JSON file with extra templates and few-shot examples.
    #[arg(long)]
    prompt_library: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    budget_words: usize,
}

impl GenerateArgs {
    fn config(&self) -> Result<PipelineConfig> {
        if self.k == 0 {
            bail!("--k must be at least 1");
        }
        let llm = LlmConfig {
            backend: self.llm_backend,
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            canned_response: self.canned_response.clone(),
            ..LlmConfig::default()
        }
        .with_env();
        llm.validate()?;
        let library = match &self.prompt_library {
            Some(p) => PromptLibrary::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PromptLibrary::default(),
        };
        library.template(&self.prompt_variant)?;
        Ok(PipelineConfig {
            retriever: RetrieverConfig { k: self.k },
            prompt: PromptConfig {
                variant: self.prompt_variant.clone(),
                budget_words: self.budget_words,
                ..PromptConfig::default()
            },
            llm,
            library,
        })
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    segment: SegmentArgs,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct QueryArgs {
    query: String,
    #[arg(long)]
    index: PathBuf,
    /// Defaults to corpus.jsonl next to the index.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Print the full answer record as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    generate: GenerateArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Defaults to corpus.jsonl next to the index.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Also compute corpus-level BLEU.
    #[arg(long)]
    corpus_bleu: bool,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    generate: GenerateArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    axis: AblationAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Source documents; needed for the segmentation axis.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Receives one report per value and comparison.txt.
    #[arg(long, default_value = "ablation")]
    out_dir: PathBuf,
    #[arg(long)]
    corpus_bleu: bool,
    #[command(flatten)]
    segment: SegmentArgs,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    generate: GenerateArgs,
}

#[derive(Args)]
struct ResolveArgs {
    #[arg(long)]
    request: String,
    #[arg(long)]
    expert: String,
    #[arg(long)]
    text_file: PathBuf,
    #[arg(long, default_value = "corpus.jsonl")]
    corpus: PathBuf,
    /// Rewritten in place when given; otherwise no index is written.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Expert list, one id per line.
    #[arg(long, default_value = "experts.txt")]
    experts: PathBuf,
    #[arg(long, default_value = "data/requests")]
    requests_dir: PathBuf,
    #[arg(long, default_value_t = 360)]
    n_words: usize,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "specsynth=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Resolve(a) => resolve(a),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let cfg = a.segment.config()?;
    let chunks = ingest_dir(&a.input_dir, &cfg, &CleanupRules::default())?;
    write_corpus(&a.out, &chunks)?;
    eprintln!("wrote {} chunks to {}", chunks.len(), a.out.display());
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let chunks = read_corpus(&a.corpus)?;
    if chunks.is_empty() {
        bail!("{} holds no chunks", a.corpus.display());
    }
    let embedder = build_embedder(&a.embed.config(None)?)?;
    let kb = KnowledgeBase::build(chunks, embedder.as_ref())?;
    kb.index().save(&a.out)?;
    eprintln!("indexed {} chunks ({}) into {}", kb.index().len(), embedder.label(), a.out.display());
    Ok(())
}

fn default_corpus(index: &Path, corpus: Option<PathBuf>) -> PathBuf {
    corpus.unwrap_or_else(|| index.with_file_name("corpus.jsonl"))
}

/// Loads a corpus and its prebuilt index into a ready pipeline.
fn load_pipeline(index_path: &Path, corpus: &Path, embed: &EmbedArgs, cfg: PipelineConfig) -> Result<Pipeline> {
    let index = VectorIndex::load(index_path).with_context(|| format!("loading {}", index_path.display()))?;
    let chunks = read_corpus(corpus).with_context(|| format!("loading {}", corpus.display()))?;
    let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&embed.config(Some(index.dim()))?)?);
    let kb = KnowledgeBase::from_parts(chunks, index)?;
    Ok(Pipeline::new(embedder, cfg).with_knowledge_base(kb))
}

fn query(a: QueryArgs) -> Result<()> {
    let corpus = default_corpus(&a.index, a.corpus);
    let pipeline = load_pipeline(&a.index, &corpus, &a.embed, a.generate.config()?)?;
    let record = pipeline.answer(&a.query, &mut Session::new("cli"))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&record)?);
        return Ok(());
    }
    println!("{}", record.response_text);
    println!();
    println!("Retrieved sources:");
    for ((source, id), score) in record.citations.iter().zip(&record.context_ids).zip(&record.scores) {
        println!("  {score:.4}  {source}  [{id}]");
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let items = load_benchmark(&a.benchmark)?;
    let corpus = default_corpus(&a.index, a.corpus);
    let pipeline = load_pipeline(&a.index, &corpus, &a.embed, a.generate.config()?)?;
    let report = run_benchmark(
        &items,
        &pipeline,
        &EvalConfig {
            corpus_bleu: a.corpus_bleu,
            ..EvalConfig::default()
        },
    )?;
    report.write(&a.report)?;
    print!("{}", report.render_table());
    eprintln!("wrote {}", a.report.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let items = load_benchmark(&a.benchmark)?;
    let documents = match &a.input_dir {
        Some(dir) => Some(load_documents(dir, &CleanupRules::default())?),
        None => None,
    };
    let setup = EvalSetup {
        chunks: read_corpus(&a.corpus)?,
        documents,
        segmenter: a.segment.config()?,
        embedder: a.embed.config(None)?,
        pipeline: a.generate.config()?,
        eval: EvalConfig {
            corpus_bleu: a.corpus_bleu,
            ..EvalConfig::default()
        },
    };
    let outcome = run_ablation(a.axis, &a.values, &items, &setup)?;
    let written = outcome.write(&a.out_dir)?;
    print!("{}", outcome.render_comparison());
    eprintln!("wrote {} files to {}", written.len(), a.out_dir.display());
    Ok(())
}

/// Writes to a sibling temporary file, then renames over `path`.
fn replace_file(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

fn resolve(a: ResolveArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.text_file).with_context(|| format!("reading {}", a.text_file.display()))?;
    let registry = ExpertRegistry::load(&a.experts)?;
    let chunks = read_corpus(&a.corpus)?;
    let index = match &a.index {
        Some(p) => Some(VectorIndex::load(p)?),
        None => None,
    };
    let embedder: Arc<dyn Embedder> =
        Arc::from(build_embedder(&a.embed.config(index.as_ref().map(VectorIndex::dim))?)?);
    let kb = match index {
        Some(index) => KnowledgeBase::from_parts(chunks, index)?,
        None => KnowledgeBase::build(chunks, embedder.as_ref())?,
    };
    let pipeline = Pipeline::new(embedder, PipelineConfig::default()).with_knowledge_base(kb);
    let segmenter = SegmenterConfig {
        n_words: a.n_words,
        ..SegmenterConfig::default()
    };
    let desk = ExpertDesk::new(&a.requests_dir, registry, segmenter).with_issues(IssuesConfig::from_env());
    let added = desk.resolve(&a.request, &a.expert, &text, &pipeline as &dyn CorpusSink)?;

    let kb = pipeline.knowledge_base().expect("pipeline was built with a knowledge base");
    replace_file(&a.corpus, |tmp| Ok(write_corpus(tmp, kb.chunks())?))?;
    if let Some(p) = &a.index {
        replace_file(p, |tmp| Ok(kb.index().save(tmp)?))?;
    }
    let ids: Vec<&str> = added.iter().map(|c: &Chunk| c.chunk_id.as_str()).collect();
    eprintln!(
        "request {} resolved by {}; added {} chunk(s): {}; corpus now {} chunks",
        a.request,
        a.expert,
        added.len(),
        ids.join(", "),
        kb.chunks().len()
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::load(&a.config)?.with_env();
    cfg.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(specsynth_core::service::serve(cfg))?;
    Ok(())
}
