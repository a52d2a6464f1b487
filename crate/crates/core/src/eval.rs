//! Exact match, token F1 and Recall@k.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_answer, normalize_answer, DocumentRecord};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("recall@{k} needs at least {k} documents, got {got}")]
    TooFewDocs { k: usize, got: usize },
}

pub fn exact_match(prediction: &str, gold_answers: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    gold_answers.iter().any(|g| normalize_answer(g) == pred)
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 over the gold aliases.
pub fn f1_score(prediction: &str, gold_answers: &[String]) -> f64 {
    let pred = normalize_answer(prediction);
    gold_answers
        .iter()
        .map(|g| token_f1(&pred, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

/// Whether any of the first `k` documents contains a gold answer.
pub fn recall_at_k(docs: &[DocumentRecord], gold_answers: &[String], k: usize) -> Result<bool, EvalError> {
    if docs.len() < k {
        return Err(EvalError::TooFewDocs { k, got: docs.len() });
    }
    Ok(docs[..k].iter().any(|d| contains_answer(d, gold_answers)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvalRow {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    pub recall: BTreeMap<usize, bool>,
}

impl QueryEvalRow {
    /// Scores one query: generation metrics when a prediction is given, and
    /// recall at every cutoff in `ks` (cutoffs beyond the list are skipped).
    pub fn score(
        query_id: &str,
        prediction: Option<&str>,
        docs: &[DocumentRecord],
        gold_answers: &[String],
        ks: &[usize],
    ) -> Self {
        let recall = ks
            .iter()
            .filter_map(|&k| recall_at_k(docs, gold_answers, k).ok().map(|hit| (k, hit)))
            .collect();
        Self {
            query_id: query_id.to_string(),
            prediction: prediction.map(str::to_string),
            exact_match: prediction.map(|p| exact_match(p, gold_answers)),
            f1: prediction.map(|p| f1_score(p, gold_answers)),
            recall,
        }
    }
}

/// Aggregate percentages over a query set, plus the per-query rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    #[serde(default)]
    pub rows: Vec<QueryEvalRow>,
}

fn percent(sum: f64, count: usize) -> Option<f64> {
    (count > 0).then(|| 100.0 * sum / count as f64)
}

pub fn aggregate(rows: Vec<QueryEvalRow>) -> EvalReport {
    let (mut em_sum, mut f1_sum, mut gen_count) = (0.0, 0.0, 0usize);
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for row in &rows {
        if let (Some(em), Some(f1)) = (row.exact_match, row.f1) {
            em_sum += f64::from(u8::from(em));
            f1_sum += f1;
            gen_count += 1;
        }
        for (&k, &hit) in &row.recall {
            let e = hits.entry(k).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    EvalReport {
        em: percent(em_sum, gen_count),
        f1: percent(f1_sum, gen_count),
        recall_at: hits
            .into_iter()
            .map(|(k, (h, c))| (k, 100.0 * h as f64 / c as f64))
            .collect(),
        n_queries: rows.len(),
        rows,
    }
}
