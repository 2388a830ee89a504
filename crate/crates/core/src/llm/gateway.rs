use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::backend::{LlmBackend, LlmRequest, LlmResponse, StepPayload, TargetSpec, TokenUsage};
use super::parse::{parse_hash_list, parse_row_lines};
use super::{LlmError, TemplateId, TemplateRegistry};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

const LENGTH_FIX: &str = "\n\nYour previous answer had the wrong number of values. Return exactly {n} values, in input order, and nothing else.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after a transient backend failure.
    pub max_retries: u32,
    pub chunk_size: usize,
    pub parallelism: usize,
    /// Max values (rows x input columns) per batched call.
    pub batch_budget: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 2048,
            max_retries: 2,
            chunk_size: 30,
            parallelism: 4,
            batch_budget: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    /// Response arrived but could not be parsed into the expected shape.
    ParseError,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEntry {
    pub template_id: TemplateId,
    pub fingerprint: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub outcome: CallOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallLog {
    pub entries: Vec<CallEntry>,
}

impl CallLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, id: TemplateId) -> usize {
        self.entries.iter().filter(|e| e.template_id == id).count()
    }

    pub fn total_usage(&self) -> TokenUsage {
        self.entries.iter().fold(TokenUsage::default(), |acc, e| TokenUsage {
            input: acc.input + e.usage.input,
            output: acc.output + e.usage.output,
        })
    }

    pub fn total_latency_ms(&self) -> u64 {
        self.entries.iter().map(|e| e.latency_ms).sum()
    }
}

/// One new column computed row by row from `input_columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRequest {
    pub input_columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub new_column: String,
    pub step_prompt: String,
    pub question: String,
    /// Extra text appended to the step prompt (e.g. a filtered passage).
    pub context: Option<String>,
}

/// Several new columns produced together, one call per row slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRequest {
    pub input_columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub targets: Vec<TargetSpec>,
    pub question: String,
    pub context: Option<String>,
}

/// Parsed values and the calls made, or the error and the calls made.
type ChunkOutcome<T> = Result<(Vec<T>, Vec<CallEntry>), (LlmError, Vec<CallEntry>)>;

pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    config: GatewayConfig,
    registry: Arc<TemplateRegistry>,
    log: Mutex<CallLog>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.describe())
            .field("config", &self.config)
            .finish()
    }
}

fn render_columns(columns: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::from("index");
    for c in columns {
        out.push_str(" | ");
        out.push_str(c);
    }
    for (i, row) in rows.iter().enumerate() {
        out.push('\n');
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(" | ");
            out.push_str(v);
        }
    }
    out
}

fn with_context(prompt: &str, context: Option<&str>) -> String {
    match context {
        Some(c) if !c.trim().is_empty() => format!("{prompt}\nRelevant information: {}", c.trim()),
        _ => prompt.to_string(),
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, config: GatewayConfig) -> Self {
        Gateway {
            backend,
            config,
            registry: Arc::new(TemplateRegistry::default()),
            log: Mutex::new(CallLog::default()),
        }
    }

    pub fn with_registry(mut self, registry: Arc<TemplateRegistry>) -> Self {
        self.registry = registry;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn backend_description(&self) -> String {
        self.backend.describe()
    }

    pub fn call_log(&self) -> CallLog {
        self.log.lock().expect("call log lock poisoned").clone()
    }

    /// Drains the log, leaving it empty.
    pub fn take_call_log(&self) -> CallLog {
        std::mem::take(&mut *self.log.lock().expect("call log lock poisoned"))
    }

    fn request(&self, id: TemplateId, text: String, payload: Option<StepPayload>) -> LlmRequest {
        LlmRequest {
            template_id: id,
            text,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            payload,
        }
    }

    /// Runs one request with transient retries; each attempt gets its own
    /// entry, collected in `entries` rather than the shared log so chunk
    /// workers can be appended in chunk order afterwards.
    fn attempt(&self, req: &LlmRequest, entries: &mut Vec<CallEntry>) -> Result<LlmResponse, LlmError> {
        let fp = req.fingerprint();
        let mut tries = 0;
        loop {
            match self.backend.complete(req) {
                Ok(resp) => {
                    entries.push(CallEntry {
                        template_id: req.template_id,
                        fingerprint: fp,
                        usage: resp.usage,
                        latency_ms: resp.latency_ms,
                        outcome: CallOutcome::Ok,
                    });
                    return Ok(resp);
                }
                Err(e) => {
                    entries.push(CallEntry {
                        template_id: req.template_id,
                        fingerprint: fp.clone(),
                        usage: TokenUsage::default(),
                        latency_ms: 0,
                        outcome: CallOutcome::BackendError,
                    });
                    let retry = matches!(e, super::BackendError::Transient(_)) && tries < self.config.max_retries;
                    if !retry {
                        return Err(e.into());
                    }
                    tries += 1;
                }
            }
        }
    }

    fn append(&self, entries: Vec<CallEntry>) {
        self.log.lock().expect("call log lock poisoned").entries.extend(entries);
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut entries = Vec::new();
        let out = self.attempt(request, &mut entries);
        self.append(entries);
        out
    }

    /// Renders `id` with `bindings` and completes it.
    pub fn complete_template(&self, id: TemplateId, bindings: &HashMap<&str, String>) -> Result<LlmResponse, LlmError> {
        let text = self.registry.render(id, bindings)?;
        self.complete(&self.request(id, text, None))
    }

    /// Single input column convenience over [`Gateway::generate_column`].
    pub fn generate_column_chunked(
        &self,
        values: &[String],
        step_prompt: &str,
        question: &str,
    ) -> Result<Vec<String>, LlmError> {
        self.generate_column(&ColumnRequest {
            input_columns: vec!["value".into()],
            rows: values.iter().map(|v| vec![v.clone()]).collect(),
            new_column: "output".into(),
            step_prompt: step_prompt.into(),
            question: question.into(),
            context: None,
        })
    }

    /// Produces one value per row. Rows are split into `chunk_size` chunks
    /// run up to `parallelism` at a time; output order follows input order.
    pub fn generate_column(&self, req: &ColumnRequest) -> Result<Vec<String>, LlmError> {
        if req.rows.is_empty() {
            return Err(LlmError::StepFailed {
                chunk_index: 0,
                cause: Box::new(LlmError::EmptyOutput),
            });
        }
        let size = self.config.chunk_size.max(1);
        let chunks: Vec<&[Vec<String>]> = req.rows.chunks(size).collect();
        let step_prompt = with_context(&req.step_prompt, req.context.as_deref());
        let target = TargetSpec {
            new_column: req.new_column.clone(),
            prompt: req.step_prompt.clone(),
            input_columns: req.input_columns.clone(),
        };
        let run = |i: usize| {
            let chunk = chunks[i];
            let mut b: HashMap<&str, String> = HashMap::new();
            b.insert("column", render_columns(&req.input_columns, chunk));
            b.insert("step_prompt", step_prompt.clone());
            b.insert("question", req.question.clone());
            let text = self
                .registry
                .render(TemplateId::LlmStep, &b)
                .map_err(|e| (LlmError::StepFailed { chunk_index: i, cause: Box::new(e) }, Vec::new()))?;
            let payload = StepPayload {
                columns: req.input_columns.clone(),
                rows: chunk.to_vec(),
                targets: vec![target.clone()],
            };
            let n = chunk.len();
            self.with_length_retry(i, TemplateId::LlmStep, text, payload, n, |t| parse_hash_list(t, n))
        };
        let parts = self.run_chunks(chunks.len(), run)?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Rows per batched call for `columns` input values per row.
    pub fn rows_per_batch(&self, columns: usize) -> usize {
        (self.config.batch_budget / columns.max(1)).max(1)
    }

    /// Produces all target columns for each row in one call per row slice.
    /// Returns one vector per target, each in row order.
    pub fn generate_columns_batched(&self, req: &BatchRequest) -> Result<Vec<Vec<String>>, LlmError> {
        if req.rows.is_empty() || req.targets.is_empty() {
            return Err(LlmError::StepFailed {
                chunk_index: 0,
                cause: Box::new(LlmError::EmptyOutput),
            });
        }
        let per_call = self.rows_per_batch(req.input_columns.len());
        let chunks: Vec<&[Vec<String>]> = req.rows.chunks(per_call).collect();
        let width = req.targets.len();
        let mut prompt = String::from("Produce the following new columns for every row:\n");
        for (k, t) in req.targets.iter().enumerate() {
            prompt.push_str(&format!(
                "Target {} - new column {} (using {}): {}\n",
                k + 1,
                t.new_column,
                t.input_columns.join(", "),
                t.prompt
            ));
        }
        prompt.push_str(&format!(
            "Return one line per input row, in order, with the {width} values separated by '#' in target order."
        ));
        let prompt = with_context(&prompt, req.context.as_deref());
        let run = |i: usize| {
            let chunk = chunks[i];
            let mut b: HashMap<&str, String> = HashMap::new();
            b.insert("column", render_columns(&req.input_columns, chunk));
            b.insert("step_prompt", prompt.clone());
            b.insert("question", req.question.clone());
            let text = self
                .registry
                .render(TemplateId::LlmStep, &b)
                .map_err(|e| (LlmError::StepFailed { chunk_index: i, cause: Box::new(e) }, Vec::new()))?;
            let payload = StepPayload {
                columns: req.input_columns.clone(),
                rows: chunk.to_vec(),
                targets: req.targets.clone(),
            };
            let n = chunk.len();
            self.with_length_retry(i, TemplateId::LlmStep, text, payload, n, |t| {
                parse_row_lines(t, n, width)
            })
        };
        let parts = self.run_chunks(chunks.len(), run)?;
        let mut cols = vec![Vec::with_capacity(req.rows.len()); width];
        for row in parts.into_iter().flatten() {
            for (k, v) in row.into_iter().enumerate() {
                cols[k].push(v);
            }
        }
        Ok(cols)
    }

    fn with_length_retry<T>(
        &self,
        chunk_index: usize,
        id: TemplateId,
        text: String,
        payload: StepPayload,
        expected: usize,
        parse: impl Fn(&str) -> Result<Vec<T>, LlmError>,
    ) -> ChunkOutcome<T> {
        let mut entries = Vec::new();
        let fail = |e: LlmError| LlmError::StepFailed {
            chunk_index,
            cause: Box::new(e),
        };
        let first = self.request(id, text.clone(), Some(payload.clone()));
        let resp = match self.attempt(&first, &mut entries) {
            Ok(r) => r,
            Err(e) => return Err((fail(e), entries)),
        };
        match parse(&resp.text) {
            Ok(v) => return Ok((v, entries)),
            Err(LlmError::LengthMismatch { .. }) | Err(LlmError::EmptyOutput) => {
                if let Some(last) = entries.last_mut() {
                    last.outcome = CallOutcome::ParseError;
                }
            }
            Err(e) => return Err((fail(e), entries)),
        }
        let retry_text = format!("{text}{}", LENGTH_FIX.replace("{n}", &expected.to_string()));
        let second = self.request(id, retry_text, Some(payload));
        let resp = match self.attempt(&second, &mut entries) {
            Ok(r) => r,
            Err(e) => return Err((fail(e), entries)),
        };
        match parse(&resp.text) {
            Ok(v) => Ok((v, entries)),
            Err(e) => {
                if let Some(last) = entries.last_mut() {
                    last.outcome = CallOutcome::ParseError;
                }
                Err((fail(e), entries))
            }
        }
    }

    /// Runs `n` chunk jobs with bounded concurrency and appends their log
    /// entries in chunk order, so the log does not depend on scheduling.
    fn run_chunks<T, F>(&self, n: usize, job: F) -> Result<Vec<Vec<T>>, LlmError>
    where
        T: Send,
        F: Fn(usize) -> Result<(Vec<T>, Vec<CallEntry>), (LlmError, Vec<CallEntry>)> + Sync,
    {
        let width = if self.backend.requires_ordered_calls() {
            1
        } else {
            self.config.parallelism.max(1)
        };
        let mut results: Vec<Option<ChunkOutcome<T>>> =
            (0..n).map(|_| None).collect();
        let mut start = 0;
        while start < n {
            let end = (start + width).min(n);
            if end - start == 1 {
                results[start] = Some(job(start));
            } else {
                let job = &job;
                std::thread::scope(|s| {
                    let handles: Vec<_> = (start..end).map(|i| s.spawn(move || job(i))).collect();
                    for (i, h) in (start..end).zip(handles) {
                        results[i] = Some(h.join().expect("chunk worker panicked"));
                    }
                });
            }
            // Stop issuing work after the first failed wave.
            if results[start..end].iter().any(|r| matches!(r, Some(Err(_)))) {
                break;
            }
            start = end;
        }
        let mut out = Vec::with_capacity(n);
        let mut first_err = None;
        for r in results.into_iter().flatten() {
            match r {
                Ok((v, entries)) => {
                    self.append(entries);
                    out.push(v);
                }
                Err((e, entries)) => {
                    self.append(entries);
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}
