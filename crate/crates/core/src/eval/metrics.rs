//! Lexical and embedding-based response metrics.
//!
//! All lexical metrics share one tokenizer: lowercase, split on
//! non-alphanumeric characters.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, Embedder, EmbeddingVector};
use crate::text::alnum_tokens;

/// Smoothing constant added to numerator and denominator of zero n-gram
/// precisions.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricWarning {
    EmptyTokens,
    ReferenceTooShort,
}

/// A metric value plus the warning raised while computing it, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored<T> {
    pub value: T,
    pub warning: Option<MetricWarning>,
}

impl<T> Scored<T> {
    fn ok(value: T) -> Self {
        Self { value, warning: None }
    }

    fn warn(value: T, warning: MetricWarning) -> Self {
        Self {
            value,
            warning: Some(warning),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Multiset intersection size of the n-grams of `a` and `b`.
fn clipped_overlap(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> usize {
    a.iter().map(|(g, &ca)| ca.min(b.get(g).copied().unwrap_or(0))).sum()
}

/// Sentence-level BLEU with add-epsilon smoothing and brevity penalty.
///
/// Orders above the candidate length are skipped, so a one-token candidate
/// is scored on unigrams only. BLEU is asymmetric: the candidate is the
/// precision side.
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> Scored<f64> {
    let cand = alnum_tokens(candidate);
    let refs = alnum_tokens(reference);
    if cand.is_empty() || refs.is_empty() || max_n == 0 {
        return Scored::warn(0.0, MetricWarning::EmptyTokens);
    }
    let stats = bleu_stats(&cand, &refs, max_n);
    Scored::ok(stats.score())
}

#[derive(Debug, Clone, Default)]
struct BleuStats {
    matches: Vec<usize>,
    totals: Vec<usize>,
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn score(&self) -> f64 {
        let orders = self.totals.iter().take_while(|&&t| t > 0).count();
        if orders == 0 {
            return 0.0;
        }
        let log_mean = (0..orders)
            .map(|i| {
                let (m, t) = (self.matches[i] as f64, self.totals[i] as f64);
                if m == 0.0 {
                    ((m + BLEU_EPSILON) / (t + BLEU_EPSILON)).ln()
                } else {
                    (m / t).ln()
                }
            })
            .sum::<f64>()
            / orders as f64;
        let bp = if self.cand_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        } else {
            1.0
        };
        bp * log_mean.exp()
    }

    fn add(&mut self, other: &BleuStats) {
        if self.matches.len() < other.matches.len() {
            self.matches.resize(other.matches.len(), 0);
            self.totals.resize(other.totals.len(), 0);
        }
        for i in 0..other.matches.len() {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }
}

fn bleu_stats(cand: &[String], refs: &[String], max_n: usize) -> BleuStats {
    let orders = max_n.min(cand.len());
    let mut stats = BleuStats {
        cand_len: cand.len(),
        ref_len: refs.len(),
        ..Default::default()
    };
    for n in 1..=orders {
        let c = ngram_counts(cand, n);
        let r = ngram_counts(refs, n);
        stats.matches.push(clipped_overlap(&c, &r));
        stats.totals.push(cand.len() + 1 - n);
    }
    stats
}

/// Corpus-level BLEU: n-gram statistics and lengths pooled over all pairs
/// before combining. Pairs with no tokens on either side are skipped.
pub fn corpus_bleu<'a, I>(pairs: I, max_n: usize) -> f64
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut total = BleuStats::default();
    for (candidate, reference) in pairs {
        let cand = alnum_tokens(candidate);
        let refs = alnum_tokens(reference);
        if cand.is_empty() || refs.is_empty() {
            continue;
        }
        let mut s = bleu_stats(&cand, &refs, max_n);
        s.matches.resize(max_n, 0);
        s.totals.resize(max_n, 0);
        total.add(&s);
    }
    if total.cand_len == 0 {
        return 0.0;
    }
    total.score()
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Scored<Prf> {
    let cand = alnum_tokens(candidate);
    let refs = alnum_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return Scored::warn(Prf::default(), MetricWarning::EmptyTokens);
    }
    if n == 0 || refs.len() < n {
        return Scored::warn(Prf::default(), MetricWarning::ReferenceTooShort);
    }
    let c = ngram_counts(&cand, n);
    let r = ngram_counts(&refs, n);
    let overlap = clipped_overlap(&c, &r) as f64;
    let cand_total = cand.len().saturating_sub(n - 1);
    let precision = if cand_total == 0 { 0.0 } else { overlap / cand_total as f64 };
    let recall = overlap / (refs.len() + 1 - n) as f64;
    Scored::ok(Prf::new(precision, recall))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Scored<Prf> {
    let cand = alnum_tokens(candidate);
    let refs = alnum_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return Scored::warn(Prf::default(), MetricWarning::EmptyTokens);
    }
    let l = lcs_len(&cand, &refs) as f64;
    Scored::ok(Prf::new(l / cand.len() as f64, l / refs.len() as f64))
}

/// Produces one vector per token for greedy-matching scores.
pub trait TokenEmbedder {
    fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<E: Embedder + ?Sized> TokenEmbedder for E {
    fn embed_tokens(&self, tokens: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.embed_batch(tokens)
    }
}

/// Unit vector stored as its non-zero coordinates, so one-hot style token
/// vectors compare in constant time.
struct SparseUnit(Vec<(usize, f64)>);

impl SparseUnit {
    fn from(v: &EmbeddingVector) -> Self {
        let norm = v.norm();
        let scale = if norm == 0.0 { 0.0 } else { 1.0 / norm };
        Self(
            v.values()
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, &x)| (i, f64::from(x) * scale))
                .collect(),
        )
    }

    fn dot(&self, other: &Self) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.0[i].1 * other.0[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Greedy-matching precision/recall/F1 over token embeddings. Each side's
/// score is the mean, over its tokens, of the best cosine to any token on
/// the other side, floored at 0.
pub fn bertscore<T: TokenEmbedder + ?Sized>(candidate: &str, reference: &str, embedder: &T) -> Result<Scored<Prf>, EmbedError> {
    let cand = alnum_tokens(candidate);
    let refs = alnum_tokens(reference);
    if cand.is_empty() || refs.is_empty() {
        return Ok(Scored::warn(Prf::default(), MetricWarning::EmptyTokens));
    }

    // Embed each distinct token once.
    let mut vocab: Vec<&str> = cand.iter().chain(&refs).map(String::as_str).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let vectors: HashMap<&str, SparseUnit> = vocab
        .iter()
        .copied()
        .zip(embedder.embed_tokens(&vocab)?.iter().map(SparseUnit::from))
        .collect();

    let greedy = |from: &[String], to: &[String]| -> f64 {
        let mut to_unique: Vec<&str> = to.iter().map(String::as_str).collect();
        to_unique.sort_unstable();
        to_unique.dedup();
        let mut best_cache: HashMap<&str, f64> = HashMap::new();
        let total: f64 = from
            .iter()
            .map(|t| {
                *best_cache.entry(t.as_str()).or_insert_with(|| {
                    let v = &vectors[t.as_str()];
                    to_unique
                        .iter()
                        .map(|u| v.dot(&vectors[u]))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
            })
            .sum();
        (total / from.len() as f64).clamp(0.0, 1.0)
    };
    let recall = greedy(&refs, &cand);
    let precision = greedy(&cand, &refs);
    Ok(Scored::ok(Prf::new(precision, recall)))
}

pub fn bertscore_f1<T: TokenEmbedder + ?Sized>(
    candidate: &str,
    reference: &str,
    embedder: &T,
) -> Result<Scored<f64>, EmbedError> {
    bertscore(candidate, reference, embedder).map(|s| Scored {
        value: s.value.f1,
        warning: s.warning,
    })
}

/// Cosine similarity of the whole-response embeddings.
pub fn response_cosine(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, EmbedError> {
    let v = embedder.embed_batch(&[candidate, reference])?;
    Ok(v[0].cosine(&v[1]))
}
