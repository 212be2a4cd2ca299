//! Corpus ingestion: extraction, cleanup, and section-aware segmentation of
//! specification documents into source-attributed chunks.

mod corpus;
mod extract;
mod preprocess;
mod segment;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    add_expert_chunk, ingest_dir, load_documents, read_corpus, write_corpus, ExpertRegistry,
    EXPERT_SECTION_TITLE,
};
pub use extract::{extract_document, DocumentFormat};
pub use preprocess::{preprocess, CleanupRules};
pub use segment::{segment, split_sentences};

/// Title given to sections that precede the first heading, or to a document
/// that has no headings at all.
pub const UNTITLED_SECTION: &str = "(untitled)";

/// Prefix of the citation line appended to every chunk.
pub const SOURCE_PREFIX: &str = "Source: ";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("empty document")]
    EmptyDocument,
    #[error("parse error in {file} at offset {offset}: {message}")]
    Parse {
        file: String,
        offset: u64,
        message: String,
    },
    #[error("duplicate spec id {0:?}")]
    DuplicateSpec(String),
    #[error("expert contribution text is empty")]
    EmptyContribution,
    #[error("expert {0:?} is not registered")]
    UnregisteredExpert(String),
    #[error("corpus line {line}: {source}")]
    CorpusLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid segmenter config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub spec_id: String,
    pub title: String,
    pub sections: Vec<RawSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSection {
    pub section_title: String,
    pub paragraphs: Vec<String>,
}

impl RawSection {
    /// The section's paragraphs joined by blank lines: the text a lossless
    /// segmentation has to reproduce.
    pub fn text(&self) -> String {
        self.paragraphs.join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkOrigin {
    Document,
    Expert,
}

/// A segmented, source-attributed unit of retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    /// Body followed by `"\nSource: "` and the source string.
    pub text: String,
    pub spec_id: String,
    pub section_title: String,
    pub source: String,
    /// Whitespace-token count of `text`, citation line included.
    pub word_count: usize,
    pub origin: ChunkOrigin,
}

impl Chunk {
    pub fn new(
        chunk_id: String,
        body: &str,
        spec_id: &str,
        section_title: &str,
        source: String,
        origin: ChunkOrigin,
    ) -> Self {
        let text = format!("{body}\n{SOURCE_PREFIX}{source}");
        Self {
            chunk_id,
            word_count: crate::text::word_count(&text),
            text,
            spec_id: spec_id.to_string(),
            section_title: section_title.to_string(),
            source,
            origin,
        }
    }

    /// Text without the trailing citation line.
    pub fn body(&self) -> &str {
        let suffix_len = 1 + SOURCE_PREFIX.len() + self.source.len();
        match self.text.len().checked_sub(suffix_len) {
            Some(end) if self.text[end..].starts_with('\n') && self.text.ends_with(&self.source) => {
                &self.text[..end]
            }
            _ => &self.text,
        }
    }

    /// The rendered citation line, e.g. `Source: TS 23.203 Scope`.
    pub fn source_line(&self) -> String {
        format!("{SOURCE_PREFIX}{}", self.source)
    }
}

/// Renders the document citation string for a section.
pub fn render_source(spec_id: &str, section_title: &str) -> String {
    if section_title.is_empty() {
        spec_id.to_string()
    } else {
        format!("{spec_id} {section_title}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStrategy {
    #[default]
    SectionAware,
    FixedOverlap,
}

impl std::str::FromStr for SegmentStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "section_aware" => Ok(Self::SectionAware),
            "fixed_overlap" => Ok(Self::FixedOverlap),
            other => Err(format!("unknown segmentation strategy {other:?}")),
        }
    }
}

impl std::fmt::Display for SegmentStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SectionAware => "section_aware",
            Self::FixedOverlap => "fixed_overlap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub n_words: usize,
    pub strategy: SegmentStrategy,
    pub fixed_chunk_words: usize,
    pub fixed_overlap_words: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            n_words: 360,
            strategy: SegmentStrategy::SectionAware,
            fixed_chunk_words: 1000,
            fixed_overlap_words: 100,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_words == 0 {
            return Err(IngestError::Config("n_words must be at least 1".into()));
        }
        if self.fixed_overlap_words >= self.fixed_chunk_words {
            return Err(IngestError::Config(
                "fixed_overlap_words must be smaller than fixed_chunk_words".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_strips_exactly_the_citation_line() {
        let c = Chunk::new(
            "x".into(),
            "Body text.\nSource: fake",
            "TS 1",
            "Intro",
            render_source("TS 1", "Intro"),
            ChunkOrigin::Document,
        );
        assert_eq!(c.text, "Body text.\nSource: fake\nSource: TS 1 Intro");
        assert_eq!(c.body(), "Body text.\nSource: fake");
        assert_eq!(c.word_count, 8);
        assert_eq!(c.source_line(), "Source: TS 1 Intro");
    }

    #[test]
    fn config_validation() {
        assert!(SegmenterConfig::default().validate().is_ok());
        let bad = SegmenterConfig {
            n_words: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SegmenterConfig {
            fixed_overlap_words: 1000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
