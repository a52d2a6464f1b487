//! Generator access: prompt assembly, answer extraction, per-document utility
//! scoring and contract-checked document rewriting.
//!
//! Two backends implement [`GeneratorBackend`]: a deterministic
//! [`LexicalStub`] that needs no model, and [`HttpBackend`], which talks to an
//! OpenAI-compatible server that can echo prompt log-probabilities.

mod http;
mod prompt;
mod stub;

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_answer, normalize_answer, DocumentRecord, Origin};

pub use http::{HttpBackend, HttpConfig};
pub use prompt::{build_prompt, extract_answer, Prompt, PromptParts, RewriteTemplates};
pub use stub::{LexicalStub, STUB_MAX_RANK};

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("backend transport failure for query {query_id} (docs [{}]): {message}", doc_ids.join(", "))]
    Transport {
        query_id: String,
        doc_ids: Vec<String>,
        message: String,
    },
    #[error("backend lacks a required capability: {0}")]
    Capability(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{mode:?} rewrite of {doc_id} violated its contract after {attempts} attempt(s): {reason}")]
    RewriteContract {
        doc_id: String,
        mode: RewriteMode,
        attempts: usize,
        reason: String,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// Failure reported by a backend before query context is attached.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{0}")]
    Transport(String),
    #[error("{0}")]
    Capability(String),
}

/// How useful a context is for producing the gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    /// Mean per-token log-probability of the gold answer continuation.
    pub answer_logprob: f64,
    /// Rank of the gold answer's first token at the answer position, 1 = top.
    pub answer_rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    QueryEnhanced,
    Counterfactual,
}

pub struct ScoreRequest<'a> {
    pub question: &'a str,
    pub docs: &'a [DocumentRecord],
    pub gold_answer: &'a str,
    pub parts: &'a PromptParts,
}

pub struct AnswerRequest<'a> {
    pub question: &'a str,
    pub docs: &'a [DocumentRecord],
    /// Only consulted by backends that simulate a reader; never sent to a model.
    pub gold_answers: &'a [String],
    pub parts: &'a PromptParts,
}

pub struct RewriteRequest<'a> {
    pub doc: &'a DocumentRecord,
    pub mode: RewriteMode,
    pub question: &'a str,
    pub gold_answers: &'a [String],
    pub templates: &'a RewriteTemplates,
    /// 0 on the first try; backends may vary sampling on retries.
    pub attempt: usize,
}

pub trait GeneratorBackend: Send + Sync {
    /// Stable identity used to invalidate score caches when the backend changes.
    fn fingerprint(&self) -> String;

    /// Upper bound on concurrent requests.
    fn max_parallel(&self) -> usize;

    fn score(&self, req: &ScoreRequest<'_>) -> Result<UtilityScore, BackendError>;

    /// Raw generator response; callers run [`extract_answer`] on it.
    fn answer(&self, req: &AnswerRequest<'_>) -> Result<String, BackendError>;

    /// Raw rewritten document text, unchecked.
    fn rewrite_text(&self, req: &RewriteRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    LexicalStub,
    HttpLogprobApi(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::LexicalStub
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn GeneratorBackend>, GenError> {
        Ok(match self {
            Self::LexicalStub => Box::new(LexicalStub::default()),
            Self::HttpLogprobApi(cfg) => Box::new(HttpBackend::new(cfg.clone())?),
        })
    }
}

fn transport(err: BackendError, query_id: &str, docs: &[DocumentRecord]) -> GenError {
    match err {
        BackendError::Capability(m) => GenError::Capability(m),
        BackendError::Transport(message) => GenError::Transport {
            query_id: query_id.to_string(),
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            message,
        },
    }
}

pub fn score_with_context(
    query_id: &str,
    question: &str,
    docs: &[DocumentRecord],
    gold_answer: &str,
    parts: &PromptParts,
    backend: &dyn GeneratorBackend,
) -> Result<UtilityScore, GenError> {
    parts.validate()?;
    let req = ScoreRequest {
        question,
        docs,
        gold_answer,
        parts,
    };
    let score = backend
        .score(&req)
        .map_err(|e| transport(e, query_id, docs))?;
    if score.answer_rank == 0 || score.answer_logprob > 0.0 || !score.answer_logprob.is_finite() {
        return Err(GenError::Capability(format!(
            "backend returned an invalid score {score:?} for query {query_id}"
        )));
    }
    Ok(score)
}

pub fn score_without_context(
    query_id: &str,
    question: &str,
    gold_answer: &str,
    parts: &PromptParts,
    backend: &dyn GeneratorBackend,
) -> Result<UtilityScore, GenError> {
    score_with_context(query_id, question, &[], gold_answer, parts, backend)
}

/// Generates and extracts an answer for `question` given `docs`.
pub fn generate_answer(
    query_id: &str,
    question: &str,
    docs: &[DocumentRecord],
    gold_answers: &[String],
    parts: &PromptParts,
    backend: &dyn GeneratorBackend,
) -> Result<String, GenError> {
    parts.validate()?;
    let req = AnswerRequest {
        question,
        docs,
        gold_answers,
        parts,
    };
    let raw = backend
        .answer(&req)
        .map_err(|e| transport(e, query_id, docs))?;
    Ok(extract_answer(&raw))
}

/// Checks a rewritten text against the mode's containment contract.
pub fn check_rewrite_contract(
    original: &DocumentRecord,
    rewritten: &str,
    mode: RewriteMode,
    gold_answers: &[String],
) -> Result<(), String> {
    let candidate = DocumentRecord::new(original.doc_id.clone(), rewritten);
    if rewritten.trim().is_empty() {
        return Err("rewrite is empty".into());
    }
    match mode {
        RewriteMode::QueryEnhanced => {
            if !contains_answer(&candidate, gold_answers) {
                return Err("rewrite lost the gold answer".into());
            }
            let (before, after) = (
                normalize_answer(&original.text).len(),
                normalize_answer(rewritten).len(),
            );
            if after > before {
                return Err(format!("rewrite grew from {before} to {after} tokens"));
            }
        }
        RewriteMode::Counterfactual => {
            if contains_answer(&candidate, gold_answers) {
                return Err("rewrite still contains a gold answer".into());
            }
            if rewritten == original.text {
                return Err("rewrite is identical to the input".into());
            }
        }
    }
    Ok(())
}

pub fn rewritten_doc_id(doc_id: &str, mode: RewriteMode) -> String {
    match mode {
        RewriteMode::QueryEnhanced => format!("{doc_id}#qe"),
        RewriteMode::Counterfactual => format!("{doc_id}#cf"),
    }
}

/// Rewrites `doc` and enforces the mode's contract, retrying up to `max_attempts` times.
#[allow(clippy::too_many_arguments)]
pub fn rewrite(
    query_id: &str,
    doc: &DocumentRecord,
    mode: RewriteMode,
    question: &str,
    gold_answers: &[String],
    templates: &RewriteTemplates,
    max_attempts: usize,
    backend: &dyn GeneratorBackend,
) -> Result<DocumentRecord, GenError> {
    if mode == RewriteMode::QueryEnhanced && !contains_answer(doc, gold_answers) {
        return Err(GenError::Precondition(format!(
            "query-enhanced rewrite needs a document with a gold answer, {} has none",
            doc.doc_id
        )));
    }
    let attempts = max_attempts.max(1);
    let mut reason = String::new();
    for attempt in 0..attempts {
        let req = RewriteRequest {
            doc,
            mode,
            question,
            gold_answers,
            templates,
            attempt,
        };
        let text = backend
            .rewrite_text(&req)
            .map_err(|e| transport(e, query_id, std::slice::from_ref(doc)))?;
        let text = text.trim().to_string();
        match check_rewrite_contract(doc, &text, mode, gold_answers) {
            Ok(()) => {
                return Ok(DocumentRecord {
                    doc_id: rewritten_doc_id(&doc.doc_id, mode),
                    text,
                    title: doc.title.clone(),
                    origin: match mode {
                        RewriteMode::QueryEnhanced => Origin::RewrittenQueryEnhanced,
                        RewriteMode::Counterfactual => Origin::RewrittenCounterfactual,
                    },
                })
            }
            Err(r) => reason = r,
        }
    }
    Err(GenError::RewriteContract {
        doc_id: doc.doc_id.clone(),
        mode,
        attempts,
        reason,
    })
}
