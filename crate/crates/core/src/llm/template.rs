//! Prompt templates with named `{slot}` markers.
//!
//! Template bodies live in `prompts/` as data files and are compiled in.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    RelevantColumns,
    ColumnDescription,
    Planning,
    VerifyPlan,
    CodeExecution,
    LlmStep,
    AnswerExtraction,
    AnswerFormat,
    PlanOptimization,
    ParagraphFilter,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::RelevantColumns,
        TemplateId::ColumnDescription,
        TemplateId::Planning,
        TemplateId::VerifyPlan,
        TemplateId::CodeExecution,
        TemplateId::LlmStep,
        TemplateId::AnswerExtraction,
        TemplateId::AnswerFormat,
        TemplateId::PlanOptimization,
        TemplateId::ParagraphFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::RelevantColumns => "relevant_columns",
            TemplateId::ColumnDescription => "column_description",
            TemplateId::Planning => "planning",
            TemplateId::VerifyPlan => "verify_plan",
            TemplateId::CodeExecution => "code_execution",
            TemplateId::LlmStep => "llm_step",
            TemplateId::AnswerExtraction => "answer_extraction",
            TemplateId::AnswerFormat => "answer_format",
            TemplateId::PlanOptimization => "plan_optimization",
            TemplateId::ParagraphFilter => "paragraph_filter",
        }
    }

    fn body(self) -> &'static str {
        match self {
            TemplateId::RelevantColumns => include_str!("../../prompts/relevant_columns.txt"),
            TemplateId::ColumnDescription => include_str!("../../prompts/column_description.txt"),
            TemplateId::Planning => include_str!("../../prompts/planning.txt"),
            TemplateId::VerifyPlan => include_str!("../../prompts/verify_plan.txt"),
            TemplateId::CodeExecution => include_str!("../../prompts/code_execution.txt"),
            TemplateId::LlmStep => include_str!("../../prompts/llm_step.txt"),
            TemplateId::AnswerExtraction => include_str!("../../prompts/answer_extraction.txt"),
            TemplateId::AnswerFormat => include_str!("../../prompts/answer_format.txt"),
            TemplateId::PlanOptimization => include_str!("../../prompts/plan_optimization.txt"),
            TemplateId::ParagraphFilter => include_str!("../../prompts/paragraph_filter.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Few-shot planning exemplars: semantic reasoning over text, commonsense
/// inference, and normalization of non-SQL-friendly columns.
pub const FEW_SHOT_EXAMPLES: [&str; 3] = [
    include_str!("../../prompts/few_shot/semantic_reasoning.txt"),
    include_str!("../../prompts/few_shot/commonsense_inference.txt"),
    include_str!("../../prompts/few_shot/normalization.txt"),
];

pub fn few_shot_block() -> String {
    FEW_SHOT_EXAMPLES
        .iter()
        .map(|e| e.trim())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid slot regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn slots(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in slot_regex().captures_iter(&self.body) {
            let s = cap[1].to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Substitutes every slot in one pass; bound values are never rescanned.
    pub fn render(&self, bindings: &HashMap<&str, String>) -> Result<String, LlmError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut last = 0;
        for cap in slot_regex().captures_iter(&self.body) {
            let whole = cap.get(0).expect("group 0 always present");
            let value = bindings
                .get(&cap[1])
                .ok_or_else(|| LlmError::MissingBinding(cap[1].to_string()))?;
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

/// Read-only after construction; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let templates = TemplateId::ALL
            .iter()
            .map(|&id| {
                (
                    id,
                    PromptTemplate {
                        id,
                        body: id.body().to_string(),
                    },
                )
            })
            .collect();
        TemplateRegistry { templates }
    }
}

impl TemplateRegistry {
    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Replaces a template body, e.g. with a locally tuned prompt.
    pub fn with_override(mut self, id: TemplateId, body: impl Into<String>) -> Self {
        self.templates.insert(
            id,
            PromptTemplate {
                id,
                body: body.into(),
            },
        );
        self
    }

    pub fn render(&self, id: TemplateId, bindings: &HashMap<&str, String>) -> Result<String, LlmError> {
        self.get(id).render(bindings)
    }
}

/// Renders a built-in template.
pub fn render_prompt(id: TemplateId, bindings: &HashMap<&str, String>) -> Result<String, LlmError> {
    PromptTemplate {
        id,
        body: id.body().to_string(),
    }
    .render(bindings)
}
