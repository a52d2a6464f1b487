//! OpenAI-compatible HTTP backend.
//!
//! Scoring uses the legacy `/completions` endpoint with `echo: true` and
//! `logprobs: N`, forcing the gold answer as a continuation of the rendered
//! prompt. Answer generation and rewriting use `/chat/completions`.

use std::collections::HashMap;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    build_prompt, AnswerRequest, BackendError, GenError, GeneratorBackend, RewriteMode, RewriteRequest,
    RewriteTemplates, ScoreRequest, UtilityScore,
};

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> usize {
    3
}
fn default_parallel() -> usize {
    4
}
fn default_top_logprobs() -> u32 {
    20
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `http://localhost:8000/v1`
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_parallel: default_parallel(),
            top_logprobs: default_top_logprobs(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CompletionLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<HashMap<String, f64>>>>,
    text_offset: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    logprobs: Option<CompletionLogprobs>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

/// Marker placed between the prompt and the forced answer.
const ANSWER_PREFIX: &str = "\nAnswer:";

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, GenError> {
        if cfg.max_parallel == 0 {
            return Err(GenError::Config("max_parallel must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GenError::Config(format!("http client: {e}")))?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        Ok(Self { cfg, client, api_key })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Transport(format!("HTTP {status}: {text}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(BackendError::Transport(format!("bad response body: {e}"))))
    }

    /// POST with retry on transport errors, 5xx and 429, exponential backoff plus jitter.
    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let base = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                let jitter = rand::rng().random_range(0..=base / 2 + 1);
                std::thread::sleep(Duration::from_millis(base + jitter));
            }
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, %msg, "generator request failed");
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport(format!(
            "giving up after {} attempt(s): {last}",
            self.cfg.max_retries + 1
        )))
    }

    fn chat(&self, system: Option<&str>, user: &str, temperature: f64, max_tokens: u32) -> Result<String, BackendError> {
        let mut messages = Vec::new();
        if let Some(s) = system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": user}));
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        let resp: ChatResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Transport(format!("bad chat response: {e}")))?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("chat response has no content".into()))
    }
}

/// Turns echoed prompt log-probabilities into a [`UtilityScore`] for the
/// continuation starting at character offset `answer_start`.
pub(crate) fn utility_from_logprobs(lp: &CompletionLogprobsView<'_>, answer_start: usize) -> Result<UtilityScore, BackendError> {
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n || lp.text_offset.len() != n {
        return Err(BackendError::Capability("logprob arrays have mismatched lengths".into()));
    }
    let first = lp
        .text_offset
        .iter()
        .rposition(|&o| o <= answer_start)
        .ok_or_else(|| BackendError::Capability("no token covers the answer position".into()))?;
    let answer_lps: Vec<f64> = lp.token_logprobs[first..]
        .iter()
        .map(|x| x.ok_or_else(|| BackendError::Capability("missing token logprob".into())))
        .collect::<Result<_, _>>()?;
    if answer_lps.is_empty() {
        return Err(BackendError::Capability("empty answer continuation".into()));
    }
    let top = lp
        .top_logprobs
        .and_then(|t| t.get(first))
        .and_then(|m| m.as_ref())
        .ok_or_else(|| BackendError::Capability("server did not return top_logprobs".into()))?;
    let actual = answer_lps[0];
    let token = &lp.tokens[first];
    let better = top
        .iter()
        .filter(|(t, &v)| *t != token && v > actual)
        .count() as u32;
    let mean = answer_lps.iter().sum::<f64>() / answer_lps.len() as f64;
    Ok(UtilityScore {
        answer_logprob: mean.min(0.0),
        answer_rank: better + 1,
    })
}

pub(crate) struct CompletionLogprobsView<'a> {
    pub tokens: &'a [String],
    pub token_logprobs: &'a [Option<f64>],
    pub top_logprobs: Option<&'a [Option<HashMap<String, f64>>]>,
    pub text_offset: &'a [usize],
}

impl GeneratorBackend for HttpBackend {
    fn fingerprint(&self) -> String {
        format!("http_logprob_api({},{},top={})", self.cfg.base_url, self.cfg.model, self.cfg.top_logprobs)
    }

    fn max_parallel(&self) -> usize {
        self.cfg.max_parallel
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<UtilityScore, BackendError> {
        let prompt = build_prompt(req.docs, req.question, req.parts)
            .map_err(|e| BackendError::Capability(e.to_string()))?;
        let prefix = format!("{}{ANSWER_PREFIX}", prompt.render());
        let full = format!("{prefix} {}", req.gold_answer);
        let body = json!({
            "model": self.cfg.model,
            "prompt": full,
            "max_tokens": 1,
            "echo": true,
            "logprobs": self.cfg.top_logprobs,
            "temperature": 0.0,
        });
        let value = self.post("completions", &body)?;
        let resp: CompletionResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Transport(format!("bad completion response: {e}")))?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| BackendError::Capability("server did not return logprobs".into()))?;
        // offsets count characters; the echoed prompt is followed by at most one generated token
        let answer_start = prefix.chars().count();
        let prompt_tokens = lp
            .text_offset
            .iter()
            .take_while(|&&o| o < full.chars().count())
            .count();
        let view = CompletionLogprobsView {
            tokens: &lp.tokens[..prompt_tokens],
            token_logprobs: &lp.token_logprobs[..prompt_tokens.min(lp.token_logprobs.len())],
            top_logprobs: lp.top_logprobs.as_deref().map(|t| &t[..prompt_tokens.min(t.len())]),
            text_offset: &lp.text_offset[..prompt_tokens],
        };
        utility_from_logprobs(&view, answer_start)
    }

    fn answer(&self, req: &AnswerRequest<'_>) -> Result<String, BackendError> {
        let prompt = build_prompt(req.docs, req.question, req.parts)
            .map_err(|e| BackendError::Capability(e.to_string()))?;
        self.chat(Some(&prompt.system), &prompt.user, 0.0, 32)
    }

    fn rewrite_text(&self, req: &RewriteRequest<'_>) -> Result<String, BackendError> {
        let template = match req.mode {
            RewriteMode::QueryEnhanced => &req.templates.query_enhanced,
            RewriteMode::Counterfactual => &req.templates.counterfactual,
        };
        let answer = req.gold_answers.first().map(String::as_str).unwrap_or_default();
        let user = RewriteTemplates::fill(template, req.question, answer, &req.doc.text);
        let temperature = if req.attempt == 0 { 0.0 } else { 0.7 };
        self.chat(None, &user, temperature, 512)
    }
}
