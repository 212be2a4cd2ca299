//! The headline defaults of every module, gathered in one serializable view.

use serde::{Deserialize, Serialize};

use crate::index::RetrieverConfig;
use crate::ingest::SegmenterConfig;
use crate::llm::LlmConfig;
use crate::prompt::PromptConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultsSnapshot {
    pub n_words: usize,
    pub k: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub budget_words: usize,
}

impl DefaultsSnapshot {
    /// Reads the values from each module's `Default` impl, so the snapshot
    /// cannot drift from what the code actually uses.
    pub fn current() -> Self {
        let llm = LlmConfig::default();
        Self {
            n_words: SegmenterConfig::default().n_words,
            k: RetrieverConfig::default().k,
            temperature: llm.temperature,
            max_output_tokens: llm.max_output_tokens,
            budget_words: PromptConfig::default().budget_words,
        }
    }
}
