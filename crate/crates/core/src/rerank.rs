//! Generator-preference reranking of retrieved documents.
//!
//! A document's key is the improvement in decoding rank it brings over the
//! no-context baseline (coarse), then the answer log-probability with it in
//! context (fine), then doc_id for a total order.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::genclient::UtilityScore;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RerankError {
    #[error("query {query_id}: no utility score for document {doc_id}")]
    MissingScore { query_id: String, doc_id: String },
    #[error("query {query_id}: document {doc_id} listed twice")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("invalid group bounds n1={n1}, n2={n2}, n={n}: need 1 <= n1 < n2 < n")]
    InvalidBounds { n1: usize, n2: usize, n: usize },
    #[error("reranked list for {query_id} has {len} entries, expected {n}")]
    LengthMismatch { query_id: String, len: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceKey {
    /// Baseline rank minus with-document rank; negative when the document hurts.
    pub delta_rank: i64,
    pub answer_logprob: f64,
}

pub fn preference_key(baseline: &UtilityScore, with_doc: &UtilityScore) -> PreferenceKey {
    PreferenceKey {
        delta_rank: i64::from(baseline.answer_rank) - i64::from(with_doc.answer_rank),
        answer_logprob: with_doc.answer_logprob,
    }
}

/// `Less` means `a` is preferred (placed earlier).
pub fn compare_preference(a: (&PreferenceKey, &str), b: (&PreferenceKey, &str)) -> Ordering {
    b.0.delta_rank
        .cmp(&a.0.delta_rank)
        .then_with(|| b.0.answer_logprob.total_cmp(&a.0.answer_logprob))
        .then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedEntry {
    pub doc_id: String,
    /// 1-based.
    pub position: usize,
    #[serde(flatten)]
    pub key: PreferenceKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedList {
    pub query_id: String,
    pub entries: Vec<RerankedEntry>,
}

impl RerankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positions are 1..n without gaps and entries follow the comparator.
    pub fn validate(&self) -> Result<(), String> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.position != i + 1 {
                return Err(format!(
                    "{}: entry {} has position {}",
                    self.query_id,
                    i + 1,
                    e.position
                ));
            }
            if i > 0 {
                let prev = &self.entries[i - 1];
                if compare_preference((&prev.key, &prev.doc_id), (&e.key, &e.doc_id)) != Ordering::Less {
                    return Err(format!("{}: entries out of preference order at {}", self.query_id, i + 1));
                }
            }
        }
        Ok(())
    }
}

/// Orders `doc_ids` by preference key and assigns positions 1..n.
pub fn rerank_documents(
    query_id: &str,
    doc_ids: &[String],
    baseline: &UtilityScore,
    with_doc: &HashMap<String, UtilityScore>,
) -> Result<RerankedList, RerankError> {
    let mut seen = HashSet::new();
    let mut keyed = Vec::with_capacity(doc_ids.len());
    for id in doc_ids {
        if !seen.insert(id.as_str()) {
            return Err(RerankError::DuplicateDoc {
                query_id: query_id.to_string(),
                doc_id: id.clone(),
            });
        }
        let score = with_doc.get(id).ok_or_else(|| RerankError::MissingScore {
            query_id: query_id.to_string(),
            doc_id: id.clone(),
        })?;
        keyed.push((id.clone(), preference_key(baseline, score)));
    }
    Ok(order_keys(query_id, keyed))
}

/// Sorts already computed keys and assigns positions.
pub fn order_keys(query_id: &str, mut keyed: Vec<(String, PreferenceKey)>) -> RerankedList {
    keyed.sort_by(|a, b| compare_preference((&a.1, &a.0), (&b.1, &b.0)));
    RerankedList {
        query_id: query_id.to_string(),
        entries: keyed
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, key))| RerankedEntry {
                doc_id,
                position: i + 1,
                key,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupBounds {
    pub n1: usize,
    pub n2: usize,
    pub n: usize,
}

impl GroupBounds {
    pub fn new(n1: usize, n2: usize, n: usize) -> Result<Self, RerankError> {
        let b = Self { n1, n2, n };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if 1 <= self.n1 && self.n1 < self.n2 && self.n2 < self.n {
            Ok(())
        } else {
            Err(RerankError::InvalidBounds {
                n1: self.n1,
                n2: self.n2,
                n: self.n,
            })
        }
    }
}

/// Good, sub-optimal and hard-negative groups: positions `[1, n1]`,
/// `(n1, n2]` and `(n2, n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Groups<'a> {
    pub good: &'a [RerankedEntry],
    pub suboptimal: &'a [RerankedEntry],
    pub hard_negative: &'a [RerankedEntry],
}

impl<'a> Groups<'a> {
    pub fn as_array(&self) -> [&'a [RerankedEntry]; 3] {
        [self.good, self.suboptimal, self.hard_negative]
    }
}

pub fn partition_groups(list: &RerankedList, bounds: GroupBounds) -> Result<Groups<'_>, RerankError> {
    bounds.validate()?;
    if list.len() != bounds.n {
        return Err(RerankError::LengthMismatch {
            query_id: list.query_id.clone(),
            len: list.len(),
            n: bounds.n,
        });
    }
    let (good, rest) = list.entries.split_at(bounds.n1);
    let (suboptimal, hard_negative) = rest.split_at(bounds.n2 - bounds.n1);
    Ok(Groups {
        good,
        suboptimal,
        hard_negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(delta: i64, lp: f64) -> PreferenceKey {
        PreferenceKey {
            delta_rank: delta,
            answer_logprob: lp,
        }
    }

    fn us(rank: u32, lp: f64) -> UtilityScore {
        UtilityScore {
            answer_logprob: lp,
            answer_rank: rank,
        }
    }

    #[test]
    fn preference_key_examples() {
        assert_eq!(preference_key(&us(1417, -6.2), &us(1, -0.3)).delta_rank, 1416);
        let same = us(7, -1.0);
        assert_eq!(preference_key(&same, &same).delta_rank, 0);
        let k = preference_key(&us(5, -1.0), &us(9, -2.5));
        assert_eq!(k, key(-4, -2.5));
    }

    #[test]
    fn comparator_orders_by_delta_then_logprob() {
        let list = order_keys(
            "q",
            vec![
                ("A".into(), key(5, -2.0)),
                ("B".into(), key(5, -0.1)),
                ("C".into(), key(2, -0.01)),
            ],
        );
        let ids: Vec<_> = list.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["B", "A", "C"]);
        assert_eq!(list.entries.iter().map(|e| e.position).collect::<Vec<_>>(), [1, 2, 3]);
        list.validate().unwrap();
    }

    #[test]
    fn equal_keys_fall_back_to_doc_id() {
        let list = order_keys(
            "q",
            ["d3", "d1", "d2"].iter().map(|id| (id.to_string(), key(0, -1.0))).collect(),
        );
        let ids: Vec<_> = list.entries.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3"]);
    }

    #[test]
    fn rerank_documents_requires_every_score() {
        let mut scores = HashMap::new();
        scores.insert("a".to_string(), us(3, -1.0));
        let err = rerank_documents("q", &["a".into(), "b".into()], &us(10, -2.0), &scores).unwrap_err();
        assert_eq!(
            err,
            RerankError::MissingScore {
                query_id: "q".into(),
                doc_id: "b".into()
            }
        );
        scores.insert("b".to_string(), us(1, -0.5));
        let list = rerank_documents("q", &["a".into(), "b".into()], &us(10, -2.0), &scores).unwrap();
        assert_eq!(list.entries[0].doc_id, "b");
        assert_eq!(list.entries[0].key.delta_rank, 9);
    }

    #[test]
    fn group_partition_sizes() {
        let list = order_keys("q", (0..20).map(|i| (format!("d{i:02}"), key(-i, 0.0))).collect());
        let g = partition_groups(&list, GroupBounds::new(5, 15, 20).unwrap()).unwrap();
        assert_eq!((g.good.len(), g.suboptimal.len(), g.hard_negative.len()), (5, 10, 5));
        assert_eq!(g.suboptimal[0].position, 6);
        assert_eq!(g.hard_negative[0].position, 16);

        let small = order_keys("q", (0..3).map(|i| (format!("d{i}"), key(-i, 0.0))).collect());
        let g = partition_groups(&small, GroupBounds::new(1, 2, 3).unwrap()).unwrap();
        assert_eq!((g.good.len(), g.suboptimal.len(), g.hard_negative.len()), (1, 1, 1));

        assert!(GroupBounds::new(0, 2, 3).is_err());
        assert!(GroupBounds::new(2, 2, 3).is_err());
        assert!(GroupBounds::new(1, 3, 3).is_err());
        assert!(partition_groups(&small, GroupBounds { n1: 1, n2: 2, n: 4 }).is_err());
    }

    #[test]
    fn serialized_entry_layout() {
        let list = order_keys("q", vec![("d".into(), key(3, -0.5))]);
        assert_eq!(
            serde_json::to_string(&list).unwrap(),
            r#"{"query_id":"q","entries":[{"doc_id":"d","position":1,"delta_rank":3,"answer_logprob":-0.5}]}"#
        );
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_cover(n in 3usize..30, a in 0usize..100, b in 0usize..100) {
            let n1 = 1 + a % (n - 2);
            let n2 = n1 + 1 + b % (n - n1 - 1);
            let list = order_keys("q", (0..n).map(|i| (format!("d{i:03}"), key(-(i as i64), 0.0))).collect());
            let g = partition_groups(&list, GroupBounds::new(n1, n2, n).unwrap()).unwrap();
            let joined: Vec<_> = g.as_array().iter().flat_map(|s| s.iter()).cloned().collect();
            prop_assert_eq!(joined, list.entries);
        }

        #[test]
        fn rerank_is_idempotent(keys in proptest::collection::vec((-3i64..3, -2i32..1), 1..12)) {
            let keyed: Vec<_> = keys.iter().enumerate()
                .map(|(i, (d, l))| (format!("d{i:02}"), key(*d, f64::from(*l))))
                .collect();
            let once = order_keys("q", keyed);
            let again = order_keys("q", once.entries.iter().map(|e| (e.doc_id.clone(), e.key)).collect());
            prop_assert_eq!(&once, &again);
            prop_assert!(once.validate().is_ok());
        }
    }
}
