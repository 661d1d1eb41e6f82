//! The interleaved translation session: per chunk, retrieve terminology,
//! build the prompt context, invoke the policy under a token budget, and
//! assign delays.
//!
//! Every token emitted for chunk `i` carries delay `chunk.end_s` — the
//! elapsed source time when that chunk became available. WAIT is an empty
//! token list, never a sentinel token, so metrics see no phantom output.

use crate::config::{Clock, DecodingParams, TokenBudgetRate};
use crate::embedding::EmbeddingProvider;
use crate::glossary::Glossary;
use crate::index::TermIndex;
use crate::lang::Lang;
use crate::metrics::HypToken;
use crate::retriever::{retrieve_for_chunk, RetrieveError, RetrieveParams, RetrievedSet};
use crate::stream::{chunk_stream, Chunk, SpeechStream, StreamError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("retrieved term id {0} is not in the glossary")]
    UnknownTerm(u32),
    #[error("term {term:?} has no {lang} translation")]
    MissingTranslation { term: String, lang: Lang },
    #[error("failed to access {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path} line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: unsupported schema {found:?}, expected {expected:?}")]
    Schema {
        path: String,
        found: String,
        expected: String,
    },
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("transport failure after {attempts} attempt(s): {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("bad response from policy service: {msg}")]
    Protocol { msg: String },
    #[error("{0}")]
    Other(String),
}

/// One completed user/assistant exchange, kept for policy conditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub prompt: String,
    pub tokens: Vec<String>,
    pub audio_ref: String,
}

/// How much history the policy sees when a session outgrows the model
/// context. The choice is recorded per step in the event log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum HistoryPolicy {
    #[default]
    KeepAll,
    Sliding {
        max_turns: usize,
    },
}

/// Everything a policy may condition on for one chunk. Audio beyond the
/// current chunk never appears here, which is what enforces causality.
pub struct PolicyRequest<'a> {
    pub chunk: &'a Chunk,
    pub prompt: &'a str,
    pub retrieved: &'a RetrievedSet,
    pub history: &'a [HistoryTurn],
    pub budget: usize,
    pub decoding: &'a DecodingParams,
    pub audio_ref: String,
    pub lang: &'a Lang,
}

/// An incremental translate-or-wait policy. Returning an empty token list
/// is the WAIT action.
pub trait TranslatorPolicy {
    fn translate(&mut self, request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError>;

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Always waits.
pub struct WaitPolicy;

impl TranslatorPolicy for WaitPolicy {
    fn translate(&mut self, _request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError> {
        Ok(Vec::new())
    }
}

/// Emits a single `<i>` token per chunk; useful for delay-accounting tests.
pub struct EchoIndexPolicy;

impl TranslatorPolicy for EchoIndexPolicy {
    fn translate(&mut self, request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError> {
        Ok(vec![format!("<{}>", request.chunk.index)])
    }
}

/// Reads the `term_map:` block of its own prompt and emits each entry's
/// target side as one token, exercising the exact surface the translation
/// model would see. With no term map it emits nothing (or a filler token).
pub struct TermMapPolicy {
    pub filler: Option<String>,
}

/// Parses `source=translation` lines out of a prompt produced by
/// [`build_prompt`].
pub fn parse_term_map(prompt: &str) -> Vec<(String, String)> {
    let Some(at) = prompt.find("term_map:\n") else {
        return Vec::new();
    };
    prompt[at + "term_map:\n".len()..]
        .lines()
        .filter_map(|line| {
            line.split_once('=')
                .map(|(s, t)| (s.to_string(), t.to_string()))
        })
        .collect()
}

impl TranslatorPolicy for TermMapPolicy {
    fn translate(&mut self, request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError> {
        let entries = parse_term_map(request.prompt);
        if entries.is_empty() {
            return Ok(self.filler.iter().cloned().collect());
        }
        Ok(entries.into_iter().map(|(_, target)| target).collect())
    }
}

/// Scripted policy driven by a closure; the workhorse for tests.
pub struct FnPolicy<F>(pub F);

impl<F> TranslatorPolicy for FnPolicy<F>
where
    F: FnMut(&PolicyRequest<'_>) -> Result<Vec<String>, PolicyError>,
{
    fn translate(&mut self, request: &PolicyRequest<'_>) -> Result<Vec<String>, PolicyError> {
        (self.0)(request)
    }
}

/// New-token budget for a chunk: `ceil(duration / unit) * tokens`, computed
/// in integer microseconds so grid-length chunks never round the wrong way.
pub fn budget(chunk: &Chunk, rate: &TokenBudgetRate) -> u32 {
    let dur_us = (chunk.duration_s() * 1e6).round() as u64;
    let unit_us = (rate.unit_s * 1e6).round() as u64;
    let units = dur_us.div_ceil(unit_us.max(1));
    (units as u32) * rate.tokens
}

/// Renders the per-chunk user message: an audio placeholder, then the term
/// map. An empty retrieved set produces the placeholder alone, with no
/// `term_map:` header.
pub fn build_prompt(
    retrieved: &RetrievedSet,
    glossary: &Glossary,
    lang: &Lang,
) -> Result<String, DriverError> {
    let mut out = String::from("<audio>");
    if retrieved.hits.is_empty() {
        return Ok(out);
    }
    out.push_str("\n\nterm_map:");
    for hit in &retrieved.hits {
        let term = glossary
            .term(hit.term_id)
            .ok_or(DriverError::UnknownTerm(hit.term_id.0))?;
        let translation =
            glossary
                .translation(hit.term_id, lang)
                .ok_or_else(|| DriverError::MissingTranslation {
                    term: term.to_string(),
                    lang: lang.clone(),
                })?;
        out.push('\n');
        out.push_str(term);
        out.push('=');
        out.push_str(translation);
    }
    Ok(out)
}

/// System message sent to chat policies, parameterized by target language.
pub fn system_prompt(lang: &Lang) -> String {
    format!(
        "You are a professional simultaneous interpreter. Your task is to translate \
         English audio chunks into accurate and fluent {}. Use the `term_map' as a \
         reference for terminology if provided.",
        lang.display_name()
    )
}

/// Session-level parameters; see [`crate::config::RunConfig`] for defaults.
#[derive(Clone, Debug)]
pub struct SessionParams {
    pub chunk_s: f64,
    pub window_s: f64,
    pub stride_s: f64,
    pub k1: usize,
    pub k2: usize,
    pub budget_rate: TokenBudgetRate,
    pub decoding: DecodingParams,
    pub lang: Lang,
    pub history: HistoryPolicy,
}

impl SessionParams {
    pub fn from_config(config: &crate::config::RunConfig) -> Self {
        Self {
            chunk_s: config.chunk_s,
            window_s: config.window_s,
            stride_s: config.stride_s,
            k1: config.k1,
            k2: config.k2,
            budget_rate: config.budget.clone(),
            decoding: config.decoding.clone(),
            lang: config.lang.clone(),
            history: HistoryPolicy::KeepAll,
        }
    }

    fn retrieve_params(&self) -> RetrieveParams {
        RetrieveParams {
            window_s: self.window_s,
            stride_s: self.stride_s,
            k1: self.k1,
            k2: self.k2,
        }
    }
}

/// One emission step of a session. `tokens` empty means the policy chose to
/// WAIT for chunk `chunk_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationStep {
    pub chunk_index: u32,
    pub delay_s: f64,
    pub tokens: Vec<String>,
    /// The policy tried to emit past its budget and was cut off.
    pub truncated: bool,
    /// The history policy dropped earlier turns before this call.
    pub context_truncated: bool,
    pub retrieved: RetrievedSet,
    pub retriever_ms: f64,
    pub policy_latency_ms: f64,
}

#[derive(Debug)]
pub enum SessionErrorKind {
    Stream(StreamError),
    Retrieve(RetrieveError),
    Prompt(DriverError),
    Policy(PolicyError),
}

/// A failed session with everything that completed before the failure.
#[derive(Debug)]
pub struct SessionAbort {
    pub steps: Vec<TranslationStep>,
    pub kind: SessionErrorKind,
}

impl fmt::Display for SessionAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            SessionErrorKind::Stream(e) => e.to_string(),
            SessionErrorKind::Retrieve(e) => e.to_string(),
            SessionErrorKind::Prompt(e) => e.to_string(),
            SessionErrorKind::Policy(e) => e.to_string(),
        };
        write!(
            f,
            "session aborted after {} step(s): {what}",
            self.steps.len()
        )
    }
}

impl std::error::Error for SessionAbort {}

/// Runs one full session over the stream. Steps come back in chunk order;
/// on failure the partial log is preserved inside the error.
pub fn run_session(
    stream: &SpeechStream,
    index: &TermIndex,
    provider: &dyn EmbeddingProvider,
    policy: &mut dyn TranslatorPolicy,
    params: &SessionParams,
    clock: &dyn Clock,
) -> Result<Vec<TranslationStep>, SessionAbort> {
    let mut steps: Vec<TranslationStep> = Vec::new();
    let mut history: Vec<HistoryTurn> = Vec::new();
    let abort = |steps: Vec<TranslationStep>, kind: SessionErrorKind| SessionAbort { steps, kind };

    let chunks = match chunk_stream(stream, params.chunk_s) {
        Ok(chunks) => chunks,
        Err(e) => return Err(abort(steps, SessionErrorKind::Stream(e))),
    };
    let retrieve_params = params.retrieve_params();
    for chunk in &chunks {
        let timed = match retrieve_for_chunk(index, provider, stream, chunk, &retrieve_params, clock)
        {
            Ok(t) => t,
            Err(e) => return Err(abort(steps, SessionErrorKind::Retrieve(e))),
        };
        let prompt = match build_prompt(&timed.set, index.glossary(), &params.lang) {
            Ok(p) => p,
            Err(e) => return Err(abort(steps, SessionErrorKind::Prompt(e))),
        };
        let step_budget = budget(chunk, &params.budget_rate) as usize;
        let (visible_history, context_truncated) = match params.history {
            HistoryPolicy::KeepAll => (&history[..], false),
            HistoryPolicy::Sliding { max_turns } => {
                let from = history.len().saturating_sub(max_turns);
                (&history[from..], from > 0)
            }
        };
        let audio_ref = format!("chunk_{:04}.wav", chunk.index);
        let request = PolicyRequest {
            chunk,
            prompt: &prompt,
            retrieved: &timed.set,
            history: visible_history,
            budget: step_budget,
            decoding: &params.decoding,
            audio_ref: audio_ref.clone(),
            lang: &params.lang,
        };
        let policy_started = clock.now_ms();
        let mut tokens = match policy.translate(&request) {
            Ok(t) => t,
            Err(e) => return Err(abort(steps, SessionErrorKind::Policy(e))),
        };
        let policy_latency_ms = clock.now_ms() - policy_started;
        let truncated = tokens.len() > step_budget;
        tokens.truncate(step_budget);
        history.push(HistoryTurn {
            prompt,
            tokens: tokens.clone(),
            audio_ref,
        });
        steps.push(TranslationStep {
            chunk_index: chunk.index,
            delay_s: chunk.end_s,
            tokens,
            truncated,
            context_truncated,
            retrieved: timed.set,
            retriever_ms: timed.retriever_ms,
            policy_latency_ms,
        });
    }
    Ok(steps)
}

/// Flattens a step log into delay-stamped tokens plus the concatenated
/// hypothesis text.
pub fn assemble_hypothesis(steps: &[TranslationStep]) -> (Vec<HypToken>, String) {
    let tokens: Vec<HypToken> = steps
        .iter()
        .flat_map(|step| {
            step.tokens.iter().map(|text| HypToken {
                text: text.clone(),
                delay_s: step.delay_s,
            })
        })
        .collect();
    let text = tokens
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    (tokens, text)
}

pub const EVENT_LOG_SCHEMA: &str = "event-log/1";

#[derive(Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
}

fn schema_major(tag: &str) -> Option<(&str, u32)> {
    let (name, version) = tag.rsplit_once('/')?;
    Some((name, version.parse().ok()?))
}

/// Writes the event log: a schema header line, then one step per line.
pub fn write_event_log(path: &Path, steps: &[TranslationStep]) -> Result<(), DriverError> {
    let io_err = |e: std::io::Error| DriverError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&SchemaHeader {
            schema: EVENT_LOG_SCHEMA.into(),
        })
        .expect("header serializes"),
    );
    out.push('\n');
    for step in steps {
        out.push_str(&serde_json::to_string(step).expect("step serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err)
}

pub fn read_event_log(path: &Path) -> Result<Vec<TranslationStep>, DriverError> {
    let text = std::fs::read_to_string(path).map_err(|e| DriverError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| DriverError::Format {
        path: path.display().to_string(),
        line: 1,
        msg: "empty event log".into(),
    })?;
    let header: SchemaHeader =
        serde_json::from_str(header_line).map_err(|e| DriverError::Format {
            path: path.display().to_string(),
            line: 1,
            msg: e.to_string(),
        })?;
    let expected = schema_major(EVENT_LOG_SCHEMA).expect("valid schema constant");
    match schema_major(&header.schema) {
        Some((name, major)) if name == expected.0 && major == expected.1 => {}
        _ => {
            return Err(DriverError::Schema {
                path: path.display().to_string(),
                found: header.schema,
                expected: EVENT_LOG_SCHEMA.into(),
            })
        }
    }
    let mut steps = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(line).map_err(|e| DriverError::Format {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(steps)
}
