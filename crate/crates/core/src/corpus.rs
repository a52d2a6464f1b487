//! Queries, documents and retrieval lists, plus the answer normalization
//! every metric and containment check is built on.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("{0}")]
    Validation(String),
}

/// Where a document came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Retrieved,
    Golden,
    RewrittenQueryEnhanced,
    /// Verbatim golden copy used when a query-enhanced rewrite broke its contract.
    RewrittenQueryEnhancedFallback,
    RewrittenCounterfactual,
    InjectedIrrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub origin: Origin,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            title: None,
            origin: Origin::Retrieved,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_doc: Option<DocumentRecord>,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.gold_answers.is_empty() {
            return Err(format!("query {}: gold_answers is empty", self.query_id));
        }
        if let Some(golden) = &self.golden_doc {
            if golden.text.trim().is_empty() {
                return Err(format!("query {}: golden_doc text is empty", self.query_id));
            }
            if !contains_answer(golden, &self.gold_answers) {
                return Err(format!(
                    "query {}: golden_doc {} contains no gold answer",
                    self.query_id, golden.doc_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Documents for one query, best score first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalList {
    pub query_id: String,
    pub entries: Vec<RetrievalEntry>,
}

impl RetrievalList {
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(format!(
                    "retrieval list {}: duplicate doc_id {}",
                    self.query_id, e.doc_id
                ));
            }
            if i > 0 && self.entries[i - 1].score < e.score {
                return Err(format!(
                    "retrieval list {}: entries not sorted by score at position {}",
                    self.query_id,
                    i + 1
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// Documents keyed by id, iteration in insertion order.
#[derive(Debug, Clone, Default)]
pub struct DocStore {
    docs: Vec<DocumentRecord>,
    index: HashMap<String, usize>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: DocumentRecord) -> Result<(), CorpusError> {
        if doc.text.trim().is_empty() {
            return Err(CorpusError::Validation(format!(
                "document {} has empty text",
                doc.doc_id
            )));
        }
        if self.index.contains_key(&doc.doc_id) {
            return Err(CorpusError::Validation(format!(
                "duplicate doc_id {}",
                doc.doc_id
            )));
        }
        self.index.insert(doc.doc_id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DocumentRecord> {
        self.docs.iter()
    }

    pub fn as_slice(&self) -> &[DocumentRecord] {
        &self.docs
    }
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, CorpusError> {
    let rows: Vec<(usize, QueryRecord)> = jsonl::read(path)?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, mut query) in rows {
        if let Some(golden) = query.golden_doc.as_mut() {
            golden.origin = Origin::Golden;
        }
        query
            .validate()
            .map_err(|message| CorpusError::Invalid { line, message })?;
        if let Some(first) = seen.insert(query.query_id.clone(), line) {
            return Err(CorpusError::Invalid {
                line,
                message: format!(
                    "duplicate query_id {} (first seen on line {first})",
                    query.query_id
                ),
            });
        }
        out.push(query);
    }
    Ok(out)
}

pub fn load_docs(path: &Path) -> Result<DocStore, CorpusError> {
    let rows: Vec<(usize, DocumentRecord)> = jsonl::read(path)?;
    let mut store = DocStore::new();
    for (line, doc) in rows {
        store.insert(doc).map_err(|e| CorpusError::Invalid {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(store)
}

pub fn load_retrievals(path: &Path) -> Result<Vec<RetrievalList>, CorpusError> {
    let rows: Vec<(usize, RetrievalList)> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, list) in rows {
        list.validate()
            .map_err(|message| CorpusError::Invalid { line, message })?;
        if !seen.insert(list.query_id.clone()) {
            return Err(CorpusError::Invalid {
                line,
                message: format!("duplicate retrieval list for query {}", list.query_id),
            });
        }
        out.push(list);
    }
    Ok(out)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips punctuation, drops English articles and splits on
/// whitespace. Each whitespace-separated word maps to at most one token.
pub fn normalize_answer(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(normalize_word)
        .collect()
}

/// Normalized form of a single whitespace-free word, `None` when it vanishes.
pub(crate) fn normalize_word(word: &str) -> Option<String> {
    let token: String = word
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    if token.is_empty() || ARTICLES.contains(&token.as_str()) {
        None
    } else {
        Some(token)
    }
}

/// Position of the first occurrence of `needle` as a contiguous run in `hay`.
/// An empty needle never matches.
pub fn find_subsequence(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn tokens_contain_answer(tokens: &[String], answers: &[String]) -> bool {
    answers
        .iter()
        .any(|a| find_subsequence(tokens, &normalize_answer(a)).is_some())
}

pub fn text_contains_answer(text: &str, answers: &[String]) -> bool {
    tokens_contain_answer(&normalize_answer(text), answers)
}

pub fn contains_answer(doc: &DocumentRecord, answers: &[String]) -> bool {
    text_contains_answer(&doc.text, answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn answers(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The Blue Car."), vec!["blue", "car"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("Cliff  Martinez"), vec!["cliff", "martinez"]);
        assert_eq!(normalize_answer("An apple, a day!"), vec!["apple", "day"]);
    }

    #[test]
    fn containment_examples() {
        let doc = DocumentRecord::new("d", "The 2008 election was won by Barack Obama in November.");
        assert!(contains_answer(&doc, &answers(&["Obama"])));
        assert!(!contains_answer(&doc, &answers(&["McCain"])));
        let sun = DocumentRecord::new("s", "Then The Sun rose over the hills.");
        assert!(contains_answer(&sun, &answers(&["the sun"])));
        // partial words never match
        let partial = DocumentRecord::new("p", "Obamacare passed.");
        assert!(!contains_answer(&partial, &answers(&["Obama"])));
        // an answer that normalizes to nothing matches nothing
        assert!(!contains_answer(&doc, &answers(&["the"])));
    }

    /// Brute-force oracle: scan every start offset and compare token by token.
    fn brute_contains(hay: &[String], needle: &[String]) -> bool {
        if needle.is_empty() {
            return false;
        }
        for start in 0..hay.len() {
            let mut ok = start + needle.len() <= hay.len();
            let mut j = 0;
            while ok && j < needle.len() {
                ok = hay[start + j] == needle[j];
                j += 1;
            }
            if ok {
                return true;
            }
        }
        false
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ A-Za-z.,!'-]{0,40}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once.join(" ")), once);
        }

        #[test]
        fn containment_matches_brute_force(
            hay in proptest::collection::vec("[bcd]", 0..12),
            needle in proptest::collection::vec("[bcd]", 0..4),
        ) {
            let text = hay.join(" ");
            let ans = needle.join(" ");
            prop_assert_eq!(
                text_contains_answer(&text, &[ans]),
                brute_contains(&normalize_answer(&text), &needle)
            );
        }

        #[test]
        fn containment_monotone_in_answers(
            text in "[a-d ]{0,30}",
            a in proptest::collection::vec("[a-d ]{1,4}", 0..4),
            extra in "[a-d ]{1,4}",
        ) {
            let before = text_contains_answer(&text, &a);
            let mut more = a.clone();
            more.push(extra);
            prop_assert!(!before || text_contains_answer(&text, &more));
        }
    }

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_queries_ok() {
        let f = write_tmp(&[
            r#"{"query_id":"q1","question":"who?","gold_answers":["x"]}"#,
            r#"{"query_id":"q2","question":"what?","gold_answers":["y"],"golden_doc":{"doc_id":"g","text":"it is y"}}"#,
            r#"{"query_id":"q3","question":"when?","gold_answers":["z","zz"]}"#,
        ]);
        let qs = load_queries(f.path()).unwrap();
        let ids: Vec<_> = qs.iter().map(|q| q.query_id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
        assert_eq!(qs[1].golden_doc.as_ref().unwrap().origin, Origin::Golden);
    }

    #[test]
    fn load_queries_missing_answers_names_line() {
        let f = write_tmp(&[
            r#"{"query_id":"q1","question":"who?","gold_answers":["x"]}"#,
            r#"{"query_id":"q2","question":"what?"}"#,
        ]);
        let err = load_queries(f.path()).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        let f = write_tmp(&[r#"{"query_id":"q1","question":"who?","gold_answers":[]}"#]);
        let err = load_queries(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("gold_answers"), "{err}");
    }

    #[test]
    fn load_queries_rejects_duplicates_and_bad_golden() {
        let f = write_tmp(&[
            r#"{"query_id":"q1","question":"a","gold_answers":["x"]}"#,
            r#"{"query_id":"q1","question":"b","gold_answers":["y"]}"#,
        ]);
        let err = load_queries(f.path()).unwrap_err().to_string();
        assert!(err.contains("duplicate query_id q1"), "{err}");
        let f = write_tmp(&[
            r#"{"query_id":"q1","question":"a","gold_answers":["x"],"golden_doc":{"doc_id":"g","text":"nothing here"}}"#,
        ]);
        assert!(load_queries(f.path()).is_err());
    }

    #[test]
    fn docs_round_trip_is_byte_identical() {
        let f = write_tmp(&[
            r#"{"doc_id":"d1","text":"alpha beta","title":"T"}"#,
            r#"{"doc_id":"d2","text":"gamma","origin":"injected_irrelevant"}"#,
        ]);
        let store = load_docs(f.path()).unwrap();
        assert_eq!(store.get("d1").unwrap().origin, Origin::Retrieved);
        let bytes = jsonl::to_bytes(store.iter()).unwrap();
        let g = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(g.path(), &bytes).unwrap();
        let again = load_docs(g.path()).unwrap();
        assert_eq!(jsonl::to_bytes(again.iter()).unwrap(), bytes);
    }

    #[test]
    fn docs_reject_duplicates_and_empty_text() {
        let f = write_tmp(&[r#"{"doc_id":"d1","text":"a"}"#, r#"{"doc_id":"d1","text":"b"}"#]);
        assert!(load_docs(f.path()).is_err());
        let f = write_tmp(&[r#"{"doc_id":"d1","text":"  "}"#]);
        assert!(load_docs(f.path()).is_err());
    }

    #[test]
    fn retrieval_list_validation() {
        let ok = RetrievalList {
            query_id: "q".into(),
            entries: vec![
                RetrievalEntry { doc_id: "a".into(), score: 0.9 },
                RetrievalEntry { doc_id: "b".into(), score: 0.9 },
                RetrievalEntry { doc_id: "c".into(), score: 0.1 },
            ],
        };
        assert!(ok.validate().is_ok());
        let mut unsorted = ok.clone();
        unsorted.entries.swap(0, 2);
        assert!(unsorted.validate().is_err());
        let mut dup = ok;
        dup.entries[1].doc_id = "a".into();
        assert!(dup.validate().is_err());
    }
}
