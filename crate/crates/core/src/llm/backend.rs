use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::fingerprint;
use super::TemplateId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    /// Retryable transport failure (timeouts, 429, 5xx).
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("no recorded response for template `{template_id}` (fingerprint {fingerprint})")]
    ReplayMiss {
        template_id: TemplateId,
        fingerprint: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

/// Structured view of an LLM-step request, for backends that compute
/// answers rather than look them up.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPayload {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub new_column: String,
    pub prompt: String,
    pub input_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub template_id: TemplateId,
    pub text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub payload: Option<StepPayload>,
}

impl LlmRequest {
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;

    /// Backends whose answers depend on call order (sequential replay) ask
    /// the gateway to issue chunk calls one at a time, in order.
    fn requires_ordered_calls(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Only `(template_id, fingerprint)` matches are answered.
    Strict,
    /// Unmatched requests take the next unfingerprinted entry for their template.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub template_id: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub response: String,
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub mode: ReplayMode,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Transcript, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::BackendUnavailable(format!("cannot read transcript {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            BackendError::BackendUnavailable(format!("malformed transcript {}: {e}", path.display()))
        })
    }

    pub fn push(&mut self, template_id: TemplateId, response: impl Into<String>) -> &mut Self {
        self.entries.push(TranscriptEntry {
            template_id,
            fingerprint: None,
            response: response.into(),
            input_tokens: 0,
            output_tokens: 0,
            latency_ms: 0,
        });
        self
    }
}

/// Deterministic replay of a recorded transcript.
#[derive(Debug)]
pub struct ScriptedBackend {
    transcript: Transcript,
    cursors: Mutex<HashMap<TemplateId, usize>>,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        ScriptedBackend {
            transcript,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        Ok(ScriptedBackend::new(Transcript::load(path)?))
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn respond(entry: &TranscriptEntry, request: &LlmRequest) -> LlmResponse {
        let usage = if entry.input_tokens == 0 && entry.output_tokens == 0 {
            TokenUsage {
                input: estimate_tokens(&request.text),
                output: estimate_tokens(&entry.response),
            }
        } else {
            TokenUsage {
                input: entry.input_tokens,
                output: entry.output_tokens,
            }
        };
        LlmResponse {
            text: entry.response.clone(),
            usage,
            latency_ms: entry.latency_ms,
        }
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let fp = request.fingerprint();
        if let Some(entry) = self.transcript.entries.iter().find(|e| {
            e.template_id == request.template_id && e.fingerprint.as_deref() == Some(fp.as_str())
        }) {
            return Ok(Self::respond(entry, request));
        }
        if self.transcript.mode == ReplayMode::Lenient {
            let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
            let cursor = cursors.entry(request.template_id).or_insert(0);
            let next = self
                .transcript
                .entries
                .iter()
                .filter(|e| e.template_id == request.template_id && e.fingerprint.is_none())
                .nth(*cursor);
            if let Some(entry) = next {
                *cursor += 1;
                return Ok(Self::respond(entry, request));
            }
        }
        Err(BackendError::ReplayMiss {
            template_id: request.template_id,
            fingerprint: fp,
        })
    }

    fn requires_ordered_calls(&self) -> bool {
        self.transcript.mode == ReplayMode::Lenient
    }

    fn describe(&self) -> String {
        format!("scripted ({} entries)", self.transcript.entries.len())
    }
}

type Handler = dyn Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend whose answers are computed by a pure function of the request.
///
/// [`RuleBackend::row_wise`] answers LLM-step requests one row at a time,
/// which makes results independent of chunking, batching and row order.
#[derive(Clone)]
pub struct RuleBackend {
    handler: Arc<Handler>,
    name: String,
}

impl std::fmt::Debug for RuleBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleBackend").field("name", &self.name).finish()
    }
}

impl RuleBackend {
    pub fn new<F>(name: impl Into<String>, handler: F) -> Self
    where
        F: Fn(&LlmRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        RuleBackend {
            handler: Arc::new(handler),
            name: name.into(),
        }
    }

    /// LLM-step answers are `f(target prompt, target input values)` per row;
    /// every other template gets `fallback`.
    pub fn row_wise<F>(fallback: impl Into<String>, f: F) -> Self
    where
        F: Fn(&str, &[&str]) -> String + Send + Sync + 'static,
    {
        let fallback = fallback.into();
        RuleBackend::new("row-wise", move |req| {
            let Some(payload) = req.payload.as_ref() else {
                return Ok(fallback.clone());
            };
            Ok(answer_rows(payload, &f))
        })
    }

    /// Returns the first input value of every row unchanged.
    pub fn echo() -> Self {
        RuleBackend::row_wise("", |_, vals| vals.first().copied().unwrap_or("").to_string())
    }
}

/// Formats row-wise answers the way the gateway parses them: a single
/// `#` list for one target, one `#`-joined line per row for several.
pub fn answer_rows<F>(payload: &StepPayload, f: &F) -> String
where
    F: Fn(&str, &[&str]) -> String,
{
    let index_of = |name: &str| {
        payload
            .columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    };
    let per_row: Vec<Vec<String>> = payload
        .rows
        .iter()
        .map(|row| {
            payload
                .targets
                .iter()
                .map(|t| {
                    let vals: Vec<&str> = t
                        .input_columns
                        .iter()
                        .filter_map(|c| index_of(c).map(|i| row[i].as_str()))
                        .collect();
                    f(&t.prompt, &vals)
                })
                .collect()
        })
        .collect();
    if payload.targets.len() == 1 {
        per_row.iter().map(|r| r[0].as_str()).collect::<Vec<_>>().join("#")
    } else {
        per_row
            .iter()
            .map(|r| r.join("#"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl LlmBackend for RuleBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let text = (self.handler)(request)?;
        Ok(LlmResponse {
            usage: TokenUsage {
                input: estimate_tokens(&request.text),
                output: estimate_tokens(&text),
            },
            text,
            latency_ms: 0,
        })
    }

    fn describe(&self) -> String {
        format!("rule ({})", self.name)
    }
}

/// Chat-completion HTTP backend (OpenAI-compatible `/chat/completions`).
#[derive(Debug, Clone)]
pub struct LiveBackend {
    pub base_url: String,
    pub model: String,
    api_key: Option<String>,
    timeout: Duration,
}

impl LiveBackend {
    pub const API_KEY_ENV: &'static str = "TABWEAVE_API_KEY";
    pub const BASE_URL_ENV: &'static str = "TABWEAVE_BASE_URL";
    pub const DEFAULT_BASE_URL: &'static str = "https://api.openai.com/v1";

    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        LiveBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the base URL and credential from the environment.
    pub fn from_env(model: impl Into<String>) -> Self {
        let base = std::env::var(Self::BASE_URL_ENV).unwrap_or_else(|_| Self::DEFAULT_BASE_URL.to_string());
        LiveBackend::new(base, model, std::env::var(Self::API_KEY_ENV).ok())
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl LlmBackend for LiveBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.text}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let start = Instant::now();
        let mut req = agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(BackendError::BackendUnavailable(format!("HTTP {status} from {url}")));
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::BackendUnavailable("response has no message content".into()))?
            .to_string();
        let usage = TokenUsage {
            input: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(LlmResponse {
            text,
            usage,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }

    fn describe(&self) -> String {
        format!("live ({} at {})", self.model, self.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: TemplateId, text: &str) -> LlmRequest {
        LlmRequest {
            template_id: id,
            text: text.into(),
            temperature: 0.01,
            max_tokens: 100,
            payload: None,
        }
    }

    #[test]
    fn fingerprint_match_replays_verbatim() {
        let r = req(TemplateId::Planning, "plan please");
        let t = Transcript {
            mode: ReplayMode::Strict,
            entries: vec![TranscriptEntry {
                template_id: TemplateId::Planning,
                fingerprint: Some(r.fingerprint()),
                response: "Step 1: SQL - x".into(),
                input_tokens: 10,
                output_tokens: 5,
                latency_ms: 0,
            }],
        };
        let b = ScriptedBackend::new(t);
        let out = b.complete(&r).unwrap();
        assert_eq!(out.text, "Step 1: SQL - x");
        assert_eq!(out.usage, TokenUsage { input: 10, output: 5 });
        // Fingerprinted entries are reusable.
        assert_eq!(b.complete(&r).unwrap().text, "Step 1: SQL - x");
    }

    #[test]
    fn strict_miss() {
        let b = ScriptedBackend::new(Transcript {
            mode: ReplayMode::Strict,
            entries: vec![TranscriptEntry {
                template_id: TemplateId::Planning,
                fingerprint: None,
                response: "x".into(),
                input_tokens: 0,
                output_tokens: 0,
                latency_ms: 0,
            }],
        });
        assert!(matches!(
            b.complete(&req(TemplateId::Planning, "other")),
            Err(BackendError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn lenient_sequential_per_template() {
        let mut t = Transcript::default();
        t.push(TemplateId::Planning, "first")
            .push(TemplateId::VerifyPlan, "v")
            .push(TemplateId::Planning, "second");
        let b = ScriptedBackend::new(t);
        assert_eq!(b.complete(&req(TemplateId::Planning, "a")).unwrap().text, "first");
        assert_eq!(b.complete(&req(TemplateId::Planning, "a")).unwrap().text, "second");
        assert_eq!(b.complete(&req(TemplateId::VerifyPlan, "a")).unwrap().text, "v");
        assert!(b.complete(&req(TemplateId::Planning, "a")).is_err());
    }

    #[test]
    fn row_wise_formats() {
        let payload = StepPayload {
            columns: vec!["a".into(), "b".into()],
            rows: vec![vec!["1".into(), "x".into()], vec!["2".into(), "y".into()]],
            targets: vec![TargetSpec {
                new_column: "n".into(),
                prompt: "p".into(),
                input_columns: vec!["b".into()],
            }],
        };
        let f = |_: &str, v: &[&str]| v.join("+");
        assert_eq!(answer_rows(&payload, &f), "x#y");
        let mut two = payload.clone();
        two.targets.push(TargetSpec {
            new_column: "m".into(),
            prompt: "q".into(),
            input_columns: vec!["a".into(), "b".into()],
        });
        assert_eq!(answer_rows(&two, &f), "x#1+x\ny#2+y");
    }
}
