//! Deterministic lexical stand-in for a generator.
//!
//! Scoring: rank 1 when any document (or the question itself) contains the
//! gold answer, otherwise `max_rank - overlap_bonus * overlap` floored at 2,
//! where `overlap` counts distinct question tokens found in the documents.
//! The log-probability is `-1 / (1 + overlap)`.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::{AnswerRequest, BackendError, GeneratorBackend, RewriteMode, RewriteRequest, ScoreRequest, UtilityScore};
use crate::corpus::{find_subsequence, normalize_answer, normalize_word, tokens_contain_answer};

pub const STUB_MAX_RANK: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicalStub {
    pub max_rank: u32,
    pub overlap_bonus: u32,
}

impl Default for LexicalStub {
    fn default() -> Self {
        Self {
            max_rank: STUB_MAX_RANK,
            overlap_bonus: 10,
        }
    }
}

impl LexicalStub {
    fn overlap(question: &str, doc_tokens: &HashSet<String>) -> u32 {
        let q: HashSet<String> = normalize_answer(question).into_iter().collect();
        q.intersection(doc_tokens).count() as u32
    }
}

impl GeneratorBackend for LexicalStub {
    fn fingerprint(&self) -> String {
        format!("lexical_stub(max_rank={},bonus={})", self.max_rank, self.overlap_bonus)
    }

    fn max_parallel(&self) -> usize {
        usize::MAX
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<UtilityScore, BackendError> {
        let answers = [req.gold_answer.to_string()];
        let per_doc: Vec<Vec<String>> = req.docs.iter().map(|d| normalize_answer(&d.text)).collect();
        let in_context = per_doc.iter().any(|t| tokens_contain_answer(t, &answers))
            || tokens_contain_answer(&normalize_answer(req.question), &answers);
        let vocab: HashSet<String> = per_doc.into_iter().flatten().collect();
        let overlap = Self::overlap(req.question, &vocab);
        let answer_rank = if in_context {
            1
        } else {
            self.max_rank
                .saturating_sub(self.overlap_bonus.saturating_mul(overlap))
                .max(2)
        };
        Ok(UtilityScore {
            answer_logprob: -1.0 / (1.0 + f64::from(overlap)),
            answer_rank,
        })
    }

    fn answer(&self, req: &AnswerRequest<'_>) -> Result<String, BackendError> {
        for doc in req.docs {
            let tokens = normalize_answer(&doc.text);
            for alias in req.gold_answers {
                if find_subsequence(&tokens, &normalize_answer(alias)).is_some() {
                    return Ok(format!("Answer: {alias}"));
                }
            }
        }
        Ok("Answer: unknown".to_string())
    }

    fn rewrite_text(&self, req: &RewriteRequest<'_>) -> Result<String, BackendError> {
        Ok(match req.mode {
            RewriteMode::QueryEnhanced => answer_sentence(&req.doc.text, req.gold_answers),
            RewriteMode::Counterfactual => {
                replace_answers(&req.doc.text, req.gold_answers, &req.doc.doc_id)
            }
        })
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut after_terminator = false;
    for (i, c) in text.char_indices() {
        if after_terminator && c.is_whitespace() {
            out.push(text[start..i].trim());
            start = i;
        }
        after_terminator = matches!(c, '.' | '!' | '?');
    }
    out.push(text[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

/// The first sentence that contains a gold answer, or the whole text when
/// the answer straddles a sentence boundary.
fn answer_sentence(text: &str, answers: &[String]) -> String {
    sentences(text)
        .into_iter()
        .find(|s| tokens_contain_answer(&normalize_answer(s), answers))
        .unwrap_or(text)
        .to_string()
}

fn distractor(doc_id: &str, answer: &str) -> String {
    let digest = Sha256::digest(format!("{doc_id}\u{1f}{answer}").as_bytes());
    format!("entity-{}", &hex::encode(digest)[..8])
}

/// Replaces every occurrence of every gold answer with a deterministic
/// placeholder entity. Words are rejoined with single spaces.
fn replace_answers(text: &str, answers: &[String], doc_id: &str) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let mut changed = false;
    for answer in answers {
        let needle = normalize_answer(answer);
        if needle.is_empty() {
            continue;
        }
        let replacement = distractor(doc_id, answer);
        loop {
            let (tokens, owners): (Vec<String>, Vec<usize>) = words
                .iter()
                .enumerate()
                .filter_map(|(i, w)| normalize_word(w).map(|t| (t, i)))
                .unzip();
            let Some(at) = find_subsequence(&tokens, &needle) else {
                break;
            };
            let first = owners[at];
            let last = owners[at + needle.len() - 1];
            words.splice(first..=last, [replacement.clone()]);
            changed = true;
        }
    }
    if changed {
        words.join(" ")
    } else {
        text.to_string()
    }
}
