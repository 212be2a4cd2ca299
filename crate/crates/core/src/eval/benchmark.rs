use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{bertscore_f1, bleu, corpus_bleu, response_cosine, rouge_l, rouge_n};
use super::EvalError;
use crate::pipeline::{Pipeline, Session};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub query: String,
    pub reference_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_spec: Option<String>,
}

/// Reads a JSONL benchmark. Blank lines are skipped; item ids must be
/// unique and queries non-empty.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_benchmark(&text)
}

pub fn parse_benchmark(text: &str) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut items: Vec<BenchmarkItem> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem = serde_json::from_str(line).map_err(|e| EvalError::Dataset {
            line: i + 1,
            message: e.to_string(),
        })?;
        if item.query.trim().is_empty() {
            return Err(EvalError::Dataset {
                line: i + 1,
                message: "empty query".into(),
            });
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(EvalError::Dataset {
                line: i + 1,
                message: format!("duplicate item_id {:?}", item.item_id),
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Scoring options that are not part of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bleu_max_n: usize,
    /// Also report corpus-level BLEU next to the per-item mean.
    pub corpus_bleu: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bleu_max_n: 4,
            corpus_bleu: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
    pub bertscore_f1: f64,
    pub cosine_sim: f64,
}

impl Scores {
    fn mean<'a>(all: impl ExactSizeIterator<Item = &'a Scores>) -> Scores {
        let n = all.len();
        if n == 0 {
            return Scores::default();
        }
        let mut acc = Scores::default();
        for s in all {
            acc.bleu += s.bleu;
            acc.rouge1_f1 += s.rouge1_f1;
            acc.rouge2_f1 += s.rouge2_f1;
            acc.rouge_l_f1 += s.rouge_l_f1;
            acc.bertscore_f1 += s.bertscore_f1;
            acc.cosine_sim += s.cosine_sim;
        }
        let n = n as f64;
        Scores {
            bleu: acc.bleu / n,
            rouge1_f1: acc.rouge1_f1 / n,
            rouge2_f1: acc.rouge2_f1 / n,
            rouge_l_f1: acc.rouge_l_f1 / n,
            bertscore_f1: acc.bertscore_f1 / n,
            cosine_sim: acc.cosine_sim / n,
        }
    }

    pub fn as_row(&self) -> [f64; 6] {
        [
            self.bleu,
            self.rouge1_f1,
            self.rouge2_f1,
            self.rouge_l_f1,
            self.bertscore_f1,
            self.cosine_sim,
        ]
    }
}

pub const SCORE_COLUMNS: [&str; 6] = ["BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "BERTScore", "Cosine"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    #[serde(flatten)]
    pub scores: Scores,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Set when the pipeline failed on this item; all scores are then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(flatten)]
    pub mean: Scores,
    pub items: usize,
    pub failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_bleu: Option<f64>,
}

/// Settings that produced a report, so runs can be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub tokenizer: String,
    pub bleu: String,
    pub aggregation: String,
    pub bertscore_embedder: String,
    pub embedder: String,
    pub k: usize,
    pub prompt_variant: String,
    pub budget_words: usize,
    pub history_turns: usize,
    pub llm_backend: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_words: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationTag {
    pub axis: String,
    pub value: String,
}

/// Per-item scores, their means, and the configuration snapshot. Contains
/// no timestamps, so identical runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_item: Vec<ItemResult>,
    pub aggregates: Aggregates,
    pub config_snapshot: ConfigSnapshot,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_json()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Plain-text table: one row per item plus a mean row.
    pub fn render_table(&self) -> String {
        let rows: Vec<(String, [f64; 6])> = self
            .per_item
            .iter()
            .map(|r| (r.item_id.clone(), r.scores.as_row()))
            .chain(std::iter::once(("mean".to_string(), self.aggregates.mean.as_row())))
            .collect();
        render_rows("item_id", &rows)
    }
}

pub(crate) fn render_rows(label: &str, rows: &[(String, [f64; 6])]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(std::iter::once(label.len()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{label:<width$}");
    for c in SCORE_COLUMNS {
        let _ = write!(out, " | {c:>9}");
    }
    out.push('\n');
    for (l, values) in rows {
        let _ = write!(out, "{l:<width$}");
        for v in values {
            let _ = write!(out, " | {v:>9.4}");
        }
        out.push('\n');
    }
    out
}

fn snapshot(pipeline: &Pipeline, eval: &EvalConfig, embedder_label: &str) -> ConfigSnapshot {
    let cfg = pipeline.config();
    ConfigSnapshot {
        tokenizer: "lowercase; split on non-alphanumeric".into(),
        bleu: format!("sentence; max_n={}; add-epsilon=1e-9; brevity penalty", eval.bleu_max_n),
        aggregation: "arithmetic mean over items".into(),
        bertscore_embedder: embedder_label.into(),
        embedder: embedder_label.into(),
        k: cfg.retriever.k,
        prompt_variant: cfg.prompt.variant.clone(),
        budget_words: cfg.prompt.budget_words,
        history_turns: cfg.prompt.history_turns,
        llm_backend: serde_json::to_value(cfg.llm.backend)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        model_name: cfg.llm.model_name.clone(),
        temperature: cfg.llm.temperature,
        max_output_tokens: cfg.llm.max_output_tokens,
        segmentation: None,
        n_words: None,
        ablation: None,
    }
}

fn score_item(item: &BenchmarkItem, pipeline: &Pipeline, eval: &EvalConfig) -> (ItemResult, Option<String>) {
    let mut session = Session::new(format!("bench-{}", item.item_id));
    let record = match pipeline.answer(&item.query, &mut session) {
        Ok(r) => r,
        Err(e) => {
            let stage = e.stage().map(|s| format!("{s}: ")).unwrap_or_default();
            return (
                ItemResult {
                    item_id: item.item_id.clone(),
                    scores: Scores::default(),
                    context_ids: Vec::new(),
                    warnings: Vec::new(),
                    error: Some(format!("{stage}{e}")),
                },
                None,
            );
        }
    };
    let (cand, reference) = (record.response_text.as_str(), item.reference_response.as_str());
    let mut warnings = Vec::new();
    let mut note = |name: &str, w: Option<super::MetricWarning>| {
        if let Some(w) = w {
            warnings.push(format!("{name}: {}", serde_json::to_value(w).unwrap().as_str().unwrap_or("")));
        }
    };

    let b = bleu(cand, reference, eval.bleu_max_n);
    note("bleu", b.warning);
    let r1 = rouge_n(cand, reference, 1);
    note("rouge1", r1.warning);
    let r2 = rouge_n(cand, reference, 2);
    note("rouge2", r2.warning);
    let rl = rouge_l(cand, reference);
    note("rougeL", rl.warning);
    let bert = match bertscore_f1(cand, reference, pipeline.embedder()) {
        Ok(s) => {
            note("bertscore", s.warning);
            s.value
        }
        Err(e) => {
            warnings.push(format!("bertscore: {e}"));
            0.0
        }
    };
    let cosine = match response_cosine(cand, reference, pipeline.embedder()) {
        Ok(c) => c,
        Err(e) => {
            warnings.push(format!("cosine: {e}"));
            0.0
        }
    };
    (
        ItemResult {
            item_id: item.item_id.clone(),
            scores: Scores {
                bleu: b.value,
                rouge1_f1: r1.value.f1,
                rouge2_f1: r2.value.f1,
                rouge_l_f1: rl.value.f1,
                bertscore_f1: bert,
                cosine_sim: cosine,
            },
            context_ids: record.context_ids,
            warnings,
            error: None,
        },
        Some(record.response_text),
    )
}

/// Answers every item in a fresh session and scores the response against
/// its reference. Items run in parallel; results keep dataset order. A
/// failing item scores 0 on every metric and records the error.
pub fn run_benchmark(items: &[BenchmarkItem], pipeline: &Pipeline, eval: &EvalConfig) -> Result<MetricReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if pipeline.knowledge_base().is_none() {
        return Err(EvalError::Pipeline(crate::pipeline::PipelineError::NotReady));
    }
    if eval.bleu_max_n == 0 {
        return Err(EvalError::Config("bleu_max_n must be >= 1".into()));
    }
    let scored: Vec<(ItemResult, Option<String>)> =
        items.par_iter().map(|item| score_item(item, pipeline, eval)).collect();

    let corpus = eval.corpus_bleu.then(|| {
        corpus_bleu(
            scored
                .iter()
                .zip(items)
                .filter_map(|((_, resp), item)| resp.as_deref().map(|r| (r, item.reference_response.as_str()))),
            eval.bleu_max_n,
        )
    });
    let per_item: Vec<ItemResult> = scored.into_iter().map(|(r, _)| r).collect();
    let aggregates = Aggregates {
        mean: Scores::mean(per_item.iter().map(|r| &r.scores)),
        items: per_item.len(),
        failed: per_item.iter().filter(|r| r.error.is_some()).count(),
        corpus_bleu: corpus,
    };
    let label = embedder_label(pipeline);
    Ok(MetricReport {
        per_item,
        aggregates,
        config_snapshot: snapshot(pipeline, eval, &label),
    })
}

fn embedder_label(pipeline: &Pipeline) -> String {
    pipeline.embedder().label()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embed::LocalHashedEmbedder;
    use crate::ingest::{Chunk, ChunkOrigin};
    use crate::pipeline::{KnowledgeBase, PipelineConfig};

    fn pipeline() -> Pipeline {
        let e = Arc::new(LocalHashedEmbedder::new(128, true));
        let chunks = ["alpha beta gamma", "delta epsilon zeta"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Chunk::new(format!("S/{i:04}/000"), t, "S", "Intro", "S Intro".into(), ChunkOrigin::Document)
            })
            .collect();
        let kb = KnowledgeBase::build(chunks, e.as_ref()).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.retriever.k = 1;
        Pipeline::new(e, cfg).with_knowledge_base(kb)
    }

    fn item(id: &str, q: &str, r: &str) -> BenchmarkItem {
        BenchmarkItem {
            item_id: id.into(),
            query: q.into(),
            reference_response: r.into(),
            source_spec: None,
        }
    }

    #[test]
    fn failed_items_score_zero_and_keep_order() {
        let items = [
            item("a", "alpha beta", "alpha beta gamma\nSource: S Intro"),
            item("b", "???", "anything"),
            item("c", "zeta", "delta epsilon zeta"),
        ];
        let report = run_benchmark(&items, &pipeline(), &EvalConfig::default()).unwrap();
        let ids: Vec<_> = report.per_item.iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(report.per_item[0].scores.bleu, 1.0);
        assert!(report.per_item[1].error.as_deref().unwrap().starts_with("embed: "));
        assert_eq!(report.per_item[1].scores, Scores::default());
        assert_eq!(report.aggregates.failed, 1);
        let mean = report.per_item.iter().map(|r| r.scores.rouge1_f1).sum::<f64>() / 3.0;
        assert!((report.aggregates.mean.rouge1_f1 - mean).abs() < 1e-12);
        assert!(report.render_table().lines().last().unwrap().starts_with("mean"));
    }

    #[test]
    fn dataset_parsing() {
        let ok = "{\"item_id\":\"1\",\"query\":\"q\",\"reference_response\":\"r\"}\n\n";
        assert_eq!(parse_benchmark(ok).unwrap().len(), 1);
        let dup = format!("{ok}{ok}");
        assert!(matches!(parse_benchmark(&dup), Err(EvalError::Dataset { line: 3, .. })));
        let empty_q = "{\"item_id\":\"1\",\"query\":\" \",\"reference_response\":\"r\"}";
        assert!(parse_benchmark(empty_q).is_err());
        assert!(matches!(
            run_benchmark(&[], &pipeline(), &EvalConfig::default()),
            Err(EvalError::EmptyDataset)
        ));
    }
}
