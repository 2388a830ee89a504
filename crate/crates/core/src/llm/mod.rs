//! Backend-agnostic LLM access.
//!
//! A [`Gateway`] wraps one [`LlmBackend`] together with a call log. The
//! scripted and rule backends make every pipeline run replayable without a
//! network.

mod backend;
mod gateway;
mod parse;
mod template;

use thiserror::Error;

pub use backend::{
    answer_rows, BackendError, LiveBackend, LlmBackend, LlmRequest, LlmResponse, ReplayMode, RuleBackend,
    ScriptedBackend, StepPayload, TargetSpec, TokenUsage, Transcript, TranscriptEntry,
};
pub use gateway::{
    BatchRequest, CallEntry, CallLog, CallOutcome, ColumnRequest, Gateway, GatewayConfig,
    DEFAULT_TEMPERATURE,
};
pub use parse::{fingerprint, parse_hash_list, parse_row_lines, strip_code_fences};
pub use template::{
    few_shot_block, render_prompt, PromptTemplate, TemplateId, TemplateRegistry,
    FEW_SHOT_EXAMPLES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("template slot `{0}` has no binding")]
    MissingBinding(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("model returned {actual} values, expected {expected}")]
    LengthMismatch { actual: usize, expected: usize },
    #[error("model returned no output")]
    EmptyOutput,
    #[error("chunk {chunk_index} failed: {cause}")]
    StepFailed {
        chunk_index: usize,
        cause: Box<LlmError>,
    },
}
