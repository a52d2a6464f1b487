//! Synthetic QA corpora with a known answer-bearing document per query.
//!
//! Each query names a unique key token plus a few shared topic tokens. Its
//! answer document shares only the key token with the question, while the
//! distractors share the topic tokens, so a lexical-overlap encoder prefers
//! the distractors until it learns which buckets matter.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentRecord, Origin, QueryRecord};
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub queries: usize,
    pub topic_vocab: usize,
    pub topics_per_query: usize,
    pub distractors_per_query: usize,
    pub filler_vocab: usize,
    pub fillers_per_doc: usize,
    /// Held-out queries appended after the training queries.
    pub test_queries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            queries: 200,
            topic_vocab: 400,
            topics_per_query: 3,
            distractors_per_query: 5,
            filler_vocab: 400,
            fillers_per_doc: 2,
            test_queries: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub queries: Vec<QueryRecord>,
    pub test_queries: Vec<QueryRecord>,
    pub docs: Vec<DocumentRecord>,
}

impl SynthCorpus {
    /// Id of the retrievable answer document for `query_id`.
    pub fn answer_doc_id(query_id: &str) -> String {
        format!("{query_id}-a")
    }
}

fn fillers(rng: &mut impl Rng, cfg: &SynthConfig) -> String {
    (0..cfg.fillers_per_doc)
        .map(|_| format!("w{}", rng.random_range(0..cfg.filler_vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let total = cfg.queries + cfg.test_queries;
    let mut queries = Vec::with_capacity(total);
    let mut docs = Vec::new();
    for i in 0..total {
        let qid = format!("sq{i:04}");
        let mut rng = rng_for(cfg.seed, &["synth", &qid]);
        let key = format!("key{i:04}");
        let answer = format!("ans{i:04}");
        let topics: Vec<String> = index::sample(&mut rng, cfg.topic_vocab, cfg.topics_per_query.min(cfg.topic_vocab))
            .into_iter()
            .map(|t| format!("topic{t:03}"))
            .collect();
        let topic_str = topics.join(" ");

        docs.push(DocumentRecord::new(
            SynthCorpus::answer_doc_id(&qid),
            format!("Record {key} holds {answer}. {}.", fillers(&mut rng, cfg)),
        ));
        for j in 0..cfg.distractors_per_query {
            docs.push(DocumentRecord::new(
                format!("{qid}-x{j}"),
                format!("Survey of {topic_str}. {}.", fillers(&mut rng, cfg)),
            ));
        }
        let golden = DocumentRecord::new(
            format!("{qid}-g"),
            format!(
                "Catalogue entry on {topic_str} and related material. The {key} record holds {answer} as its value. {}.",
                fillers(&mut rng, cfg)
            ),
        )
        .with_origin(Origin::Golden);
        queries.push(QueryRecord {
            query_id: qid,
            question: format!("Which value does {key} hold for {topic_str}?"),
            gold_answers: vec![answer],
            golden_doc: Some(golden),
        });
    }
    let test_queries = queries.split_off(cfg.queries);
    SynthCorpus {
        queries,
        test_queries,
        docs,
    }
}
