//! Prompt assembly: system instructions, few-shot examples, conversation
//! history, retrieved context, and the live question, fitted to a word
//! budget.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Chunk;
use crate::text::word_count;

pub const DEFAULT_VARIANT: &str = "default";
pub const DEFAULT_SYSTEM_TEXT: &str = "You are a helpful assistant. Use what you know already to answer the QUESTION. Improve the answer using the following pieces of CONTEXT. Always return the most relevant SOURCE.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("budget too small: system text and query alone need {needed} words, budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("unknown prompt variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid prompt config: {0}")]
    Invalid(String),
    #[error("prompt config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("prompt config json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

fn default_context_header() -> String {
    "CONTEXT:".into()
}

fn default_question_header() -> String {
    "QUESTION:".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub variant_name: String,
    pub system_text: String,
    #[serde(default = "default_context_header")]
    pub context_header: String,
    #[serde(default = "default_question_header")]
    pub question_header: String,
    /// Set for templates whose wording reconstructs another system's prompt
    /// rather than quoting it.
    #[serde(default)]
    pub approximation: bool,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            variant_name: DEFAULT_VARIANT.into(),
            system_text: DEFAULT_SYSTEM_TEXT.into(),
            context_header: default_context_header(),
            question_header: default_question_header(),
            approximation: false,
        }
    }
}

impl PromptTemplate {
    /// The shipped templates: the source-citing default plus two
    /// approximations of other assistants' prompts for comparison runs.
    pub fn builtins() -> Vec<Self> {
        vec![
            Self::default(),
            Self {
                variant_name: "chatgpt_enterprise".into(),
                system_text: "Assistant helps employees with questions about the documents. Be brief in your answers. Answer ONLY with the facts listed in the list of sources below. If there isn't enough information below, say you don't know. Each source has a name followed by a colon and the actual information; always include the source name for each fact you use in the response.".into(),
                approximation: true,
                ..Self::default()
            },
            Self {
                variant_name: "privategpt".into(),
                system_text: "Use the following pieces of context to answer the question at the end. If you don't know the answer, just say that you don't know, don't try to make up an answer.".into(),
                approximation: true,
                ..Self::default()
            },
        ]
    }

    fn user_message(&self, contexts: &[&str], query: &str) -> String {
        let mut s = String::new();
        s.push_str(&self.context_header);
        s.push('\n');
        s.push_str(&contexts.join("\n\n"));
        if !contexts.is_empty() {
            s.push('\n');
        }
        s.push('\n');
        s.push_str(&self.question_header);
        s.push('\n');
        s.push_str(query);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub context: Vec<String>,
    pub ideal_response: String,
}

impl FewShotExample {
    fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty()
            || self.ideal_response.trim().is_empty()
            || self.context.is_empty()
            || self.context.iter().any(|c| c.trim().is_empty())
        {
            return Err(PromptError::Invalid("few-shot example fields must be non-empty".into()));
        }
        Ok(())
    }
}

/// A completed earlier exchange in the same session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub messages: Vec<Message>,
    pub estimated_words: usize,
    /// Texts of the context chunks that survived budgeting, most similar
    /// first, exactly as they appear in the final user message.
    pub contexts: Vec<String>,
}

impl AssembledPrompt {
    pub fn live_query_message(&self) -> &Message {
        self.messages.last().expect("assembled prompt always has a user message")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub variant: String,
    pub budget_words: usize,
    /// Most recent turns of history to offer to `assemble`.
    pub history_turns: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            variant: DEFAULT_VARIANT.into(),
            budget_words: 3000,
            history_turns: 3,
        }
    }
}

/// Templates and few-shot examples, as loaded from
/// `{"templates": [...], "shots": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLibrary {
    #[serde(default)]
    pub templates: Vec<PromptTemplate>,
    #[serde(default)]
    pub shots: Vec<FewShotExample>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self {
            templates: PromptTemplate::builtins(),
            shots: Vec::new(),
        }
    }
}

impl PromptLibrary {
    /// Loads a config file. Built-in templates stay available unless the
    /// file redefines a variant of the same name.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: PromptLibrary = serde_json::from_str(&text)?;
        let mut lib = PromptLibrary::default();
        for t in file.templates {
            if t.system_text.trim().is_empty() {
                return Err(PromptError::Invalid(format!("template {:?} has empty system_text", t.variant_name)));
            }
            lib.templates.retain(|b| b.variant_name != t.variant_name);
            lib.templates.push(t);
        }
        for s in &file.shots {
            s.validate()?;
        }
        lib.shots = file.shots;
        Ok(lib)
    }

    pub fn template(&self, variant: &str) -> Result<&PromptTemplate> {
        self.templates
            .iter()
            .find(|t| t.variant_name == variant)
            .ok_or_else(|| PromptError::UnknownVariant(variant.to_string()))
    }
}

/// Builds the message list, dropping the least-similar contexts, then the
/// oldest history turns, then the last few-shot examples until the word
/// estimate fits `budget_words`. The system text and live query are always
/// kept.
pub fn assemble(
    query: &str,
    contexts: &[Chunk],
    history: &[HistoryTurn],
    template: &PromptTemplate,
    shots: &[FewShotExample],
    budget_words: usize,
) -> Result<AssembledPrompt> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    let minimal = word_count(&template.system_text) + word_count(&template.user_message(&[], query));
    if minimal > budget_words {
        return Err(PromptError::BudgetTooSmall {
            needed: minimal,
            budget: budget_words,
        });
    }

    let context_texts: Vec<&str> = contexts.iter().map(|c| c.text.as_str()).collect();
    let mut n_contexts = context_texts.len();
    let mut history_from = 0;
    let mut n_shots = shots.len();

    loop {
        let prompt = render(
            query,
            &context_texts[..n_contexts],
            &history[history_from..],
            template,
            &shots[..n_shots],
        );
        if prompt.estimated_words <= budget_words {
            return Ok(prompt);
        }
        if n_contexts > 0 {
            n_contexts -= 1;
        } else if history_from < history.len() {
            history_from += 1;
        } else if n_shots > 0 {
            n_shots -= 1;
        } else {
            unreachable!("minimal prompt was checked against the budget");
        }
    }
}

fn render(
    query: &str,
    contexts: &[&str],
    history: &[HistoryTurn],
    template: &PromptTemplate,
    shots: &[FewShotExample],
) -> AssembledPrompt {
    let mut messages = vec![Message::new(Role::System, template.system_text.clone())];
    for shot in shots {
        let ctx: Vec<&str> = shot.context.iter().map(String::as_str).collect();
        messages.push(Message::new(Role::User, template.user_message(&ctx, &shot.query)));
        messages.push(Message::new(Role::Assistant, shot.ideal_response.clone()));
    }
    for turn in history {
        messages.push(Message::new(Role::User, turn.query.clone()));
        messages.push(Message::new(Role::Assistant, turn.response.clone()));
    }
    messages.push(Message::new(Role::User, template.user_message(contexts, query)));
    let estimated_words = messages.iter().map(|m| word_count(&m.content)).sum();
    AssembledPrompt {
        messages,
        estimated_words,
        contexts: contexts.iter().map(|s| s.to_string()).collect(),
    }
}
