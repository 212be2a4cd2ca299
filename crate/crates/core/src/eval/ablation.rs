use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::benchmark::{render_rows, run_benchmark, AblationTag, BenchmarkItem, EvalConfig, MetricReport};
use super::EvalError;
use crate::embed::{build_embedder, EmbedBackend, Embedder, EmbedderConfig};
use crate::ingest::{segment, Chunk, RawDocument, SegmentStrategy, SegmenterConfig};
use crate::pipeline::{KnowledgeBase, Pipeline, PipelineConfig};

/// Everything needed to build a pipeline for one evaluation run.
#[derive(Debug, Clone, Default)]
pub struct EvalSetup {
    /// Pre-segmented corpus used unless the segmentation axis is varied.
    pub chunks: Vec<Chunk>,
    /// Cleaned source documents; required for the segmentation axis.
    pub documents: Option<Vec<RawDocument>>,
    pub segmenter: SegmenterConfig,
    pub embedder: EmbedderConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    K,
    PromptVariant,
    Segmentation,
    Model,
    Embedder,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::K => "k",
            Self::PromptVariant => "prompt_variant",
            Self::Segmentation => "segmentation",
            Self::Model => "model",
            Self::Embedder => "embedder",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "k" => Self::K,
            "prompt_variant" | "prompt" => Self::PromptVariant,
            "segmentation" => Self::Segmentation,
            "model" => Self::Model,
            "embedder" => Self::Embedder,
            other => return Err(EvalError::InvalidAxis(other.to_string())),
        })
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum AxisValue {
    K(usize),
    PromptVariant(String),
    Segmentation(SegmenterConfig),
    Model(String),
    Embedder(EmbedderConfig),
}

fn parse_value(axis: AblationAxis, raw: &str, setup: &EvalSetup) -> Result<AxisValue, EvalError> {
    let invalid = |reason: String| EvalError::InvalidAxisValue {
        axis: axis.to_string(),
        value: raw.to_string(),
        reason,
    };
    let raw_trim = raw.trim();
    match axis {
        AblationAxis::K => match raw_trim.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(AxisValue::K(k)),
            _ => Err(invalid("k must be a positive integer".into())),
        },
        AblationAxis::PromptVariant => {
            setup
                .pipeline
                .library
                .template(raw_trim)
                .map_err(|e| invalid(e.to_string()))?;
            Ok(AxisValue::PromptVariant(raw_trim.to_string()))
        }
        AblationAxis::Segmentation => {
            if setup.documents.is_none() {
                return Err(invalid("segmentation ablation needs the raw documents".into()));
            }
            // "strategy" or "strategy:n_words".
            let (name, words) = match raw_trim.split_once(':') {
                Some((n, w)) => (n, Some(w)),
                None => (raw_trim, None),
            };
            let mut cfg = setup.segmenter.clone();
            cfg.strategy = name.parse::<SegmentStrategy>().map_err(|e| invalid(e.to_string()))?;
            if let Some(w) = words {
                let n: usize = w.parse().map_err(|_| invalid("n_words must be an integer".into()))?;
                match cfg.strategy {
                    SegmentStrategy::SectionAware => cfg.n_words = n,
                    SegmentStrategy::FixedOverlap => cfg.fixed_chunk_words = n,
                }
            }
            cfg.validate().map_err(|e| invalid(e.to_string()))?;
            Ok(AxisValue::Segmentation(cfg))
        }
        AblationAxis::Model => {
            if raw_trim.is_empty() {
                return Err(invalid("model name is empty".into()));
            }
            Ok(AxisValue::Model(raw_trim.to_string()))
        }
        AblationAxis::Embedder => {
            let mut cfg = setup.embedder.clone();
            let (name, arg) = match raw_trim.split_once(':') {
                Some((n, a)) => (n, Some(a)),
                None => (raw_trim, None),
            };
            match name {
                "local_hashed" => {
                    cfg.backend = EmbedBackend::LocalHashed;
                    if let Some(a) = arg {
                        cfg.dim = a.parse().map_err(|_| invalid("dimension must be an integer".into()))?;
                    }
                }
                "remote" => {
                    cfg.backend = EmbedBackend::RemoteHttp;
                    if let Some(a) = arg {
                        cfg.model_name = Some(a.to_string());
                    }
                }
                other => return Err(invalid(format!("unknown embedder {other:?}"))),
            }
            cfg.validate().map_err(|e| invalid(e.to_string()))?;
            Ok(AxisValue::Embedder(cfg))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub value: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub axis: AblationAxis,
    pub runs: Vec<AblationRun>,
}

impl AblationOutcome {
    /// One row per value with the aggregate of each metric.
    pub fn render_comparison(&self) -> String {
        let rows: Vec<(String, [f64; 6])> = self
            .runs
            .iter()
            .map(|r| (format!("{}={}", self.axis, r.value), r.report.aggregates.mean.as_row()))
            .collect();
        render_rows("run", &rows)
    }

    /// Writes `{axis}_{value}.json` per run and `comparison.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for run in &self.runs {
            let safe: String = run
                .value
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect();
            let path = dir.join(format!("{}_{}.json", self.axis, safe));
            run.report.write(&path)?;
            written.push(path);
        }
        let table = dir.join("comparison.txt");
        std::fs::write(&table, self.render_comparison()).map_err(io(&table))?;
        written.push(table);
        Ok(written)
    }
}

fn build_pipeline(
    chunks: Vec<Chunk>,
    embedder: Arc<dyn Embedder>,
    cfg: PipelineConfig,
) -> Result<Pipeline, EvalError> {
    let kb = KnowledgeBase::build(chunks, embedder.as_ref())?;
    Ok(Pipeline::new(embedder, cfg).with_knowledge_base(kb))
}

/// Runs the benchmark once with the setup as given.
pub fn run_eval(items: &[BenchmarkItem], setup: &EvalSetup) -> Result<MetricReport, EvalError> {
    let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&setup.embedder)?);
    let pipeline = build_pipeline(setup.chunks.clone(), embedder, setup.pipeline.clone())?;
    let mut report = run_benchmark(items, &pipeline, &setup.eval)?;
    report.config_snapshot.segmentation = Some(setup.segmenter.strategy.to_string());
    report.config_snapshot.n_words = Some(setup.segmenter.n_words);
    Ok(report)
}

/// Runs the benchmark once per value of `axis`, changing only that
/// setting. Every value is validated before the first run starts. Runs
/// that only change retrieval or generation settings share one index.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[String],
    items: &[BenchmarkItem],
    setup: &EvalSetup,
) -> Result<AblationOutcome, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("ablation needs at least one value".into()));
    }
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let parsed: Vec<AxisValue> = values
        .iter()
        .map(|v| parse_value(axis, v, setup))
        .collect::<Result<_, _>>()?;

    let shared: Option<(Arc<dyn Embedder>, KnowledgeBase)> = match axis {
        AblationAxis::Segmentation | AblationAxis::Embedder => None,
        _ => {
            let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&setup.embedder)?);
            let kb = KnowledgeBase::build(setup.chunks.clone(), embedder.as_ref())?;
            Some((embedder, kb))
        }
    };

    let mut runs = Vec::with_capacity(parsed.len());
    for (raw, value) in values.iter().zip(parsed) {
        let mut cfg = setup.pipeline.clone();
        let mut segmenter = setup.segmenter.clone();
        let pipeline = match value {
            AxisValue::K(k) => {
                cfg.retriever.k = k;
                None
            }
            AxisValue::PromptVariant(v) => {
                cfg.prompt.variant = v;
                None
            }
            AxisValue::Model(m) => {
                cfg.llm.model_name = m;
                None
            }
            AxisValue::Segmentation(seg) => {
                let docs = setup.documents.as_deref().unwrap_or_default();
                let mut chunks = Vec::new();
                for doc in docs {
                    chunks.extend(segment(doc, &seg));
                }
                segmenter = seg;
                let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&setup.embedder)?);
                Some(build_pipeline(chunks, embedder, cfg.clone())?)
            }
            AxisValue::Embedder(ecfg) => {
                let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&ecfg)?);
                Some(build_pipeline(setup.chunks.clone(), embedder, cfg.clone())?)
            }
        };
        let pipeline = match pipeline {
            Some(p) => p,
            None => {
                let (embedder, kb) = shared.as_ref().expect("shared index for non-index axes");
                Pipeline::new(embedder.clone(), cfg).with_knowledge_base(kb.clone())
            }
        };
        let mut report = run_benchmark(items, &pipeline, &setup.eval)?;
        report.config_snapshot.segmentation = Some(segmenter.strategy.to_string());
        report.config_snapshot.n_words = Some(segmenter.n_words);
        report.config_snapshot.ablation = Some(AblationTag {
            axis: axis.to_string(),
            value: raw.clone(),
        });
        tracing::info!(axis = %axis, value = %raw, bleu = report.aggregates.mean.bleu, "ablation run done");
        runs.push(AblationRun {
            value: raw.clone(),
            report,
        });
    }
    Ok(AblationOutcome { axis, runs })
}
