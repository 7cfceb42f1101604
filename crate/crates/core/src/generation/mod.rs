//! Retrieval-augmented prompting and candidate description generation.

pub mod backend;
pub mod candidates;
pub mod mock;
pub mod prompt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendError, CompletionBackend, GenerationParams, HttpBackend, RetryPolicy, DEFAULT_MODEL};
pub use candidates::{generate_candidates, generate_candidates_with_template, merge_context, merge_descriptions, Generation};
pub use mock::{canonical_sql, MockBackend, Phrasebook, MOCK_MODEL_ID};
pub use prompt::{
    build_backtranslation_prompt, build_prompt, prompt_hash, template_ids, PromptContext, PromptMode,
    BACKTRANSLATE_TEMPLATE, DESCRIBE_TEMPLATE, EXAMPLES_HEADING, MERGE_TEMPLATE, NOTES_HEADING, QUESTION_HEADING,
    SUBS_HEADING, TABLES_HEADING, TARGET_HEADING,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned only blank completions")]
    EmptyCompletion,
    #[error("no accepted description for step `{0}`")]
    MissingSubDescription(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    Generated,
    Merged,
    AnnotatorEdited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Proposed,
    Edited,
    Accepted,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub text: String,
    pub origin: CandidateOrigin,
    pub model_id: String,
    #[serde(default)]
    pub rank: Option<u8>,
    pub status: CandidateStatus,
    pub created_at: DateTime<Utc>,
    /// sha256 of the prompt that produced the text; empty for annotator edits.
    #[serde(default)]
    pub prompt_hash: String,
}
