#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ragcurriculum::corpus::{QueryRecord, RetrievalEntry, RetrievalList};
use ragcurriculum::jsonl;
use ragcurriculum::pipeline::{write_synthetic, Paths, PipelineConfig};
use ragcurriculum::synth::{self, SynthConfig, SynthCorpus};

pub fn synth_corpus(queries: usize, test_queries: usize) -> SynthCorpus {
    synth::generate(&SynthConfig {
        queries,
        test_queries,
        ..Default::default()
    })
}

/// Hand-built top-20 lists over a synthetic corpus. Even-indexed queries
/// get their answer document inside the top 5 (slot `i % 3`), odd ones at
/// slot 7, so Common and Hard carry answers for half the queries.
pub fn planted_retrievals(corpus: &SynthCorpus, distractors: usize) -> Vec<RetrievalList> {
    let all: Vec<&QueryRecord> = corpus.queries.iter().chain(&corpus.test_queries).collect();
    let total = all.len();
    all.iter()
        .enumerate()
        .map(|(i, q)| {
            let mut ids: Vec<String> = (0..distractors).map(|j| format!("{}-x{j}", q.query_id)).collect();
            let mut next = 1;
            while ids.len() < 19 {
                let other = &all[(i + next) % total].query_id;
                ids.extend((0..distractors).map(|j| format!("{other}-x{j}")));
                next += 1;
            }
            ids.truncate(19);
            let slot = if i % 2 == 0 { i % 3 } else { 7 };
            ids.insert(slot, SynthCorpus::answer_doc_id(&q.query_id));
            RetrievalList {
                query_id: q.query_id.clone(),
                entries: ids
                    .into_iter()
                    .enumerate()
                    .map(|(r, doc_id)| RetrievalEntry {
                        doc_id,
                        score: 1.0 - r as f64 / 100.0,
                    })
                    .collect(),
            }
        })
        .collect()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PipelineConfig,
}

impl Fixture {
    pub fn base(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join(&self.config.paths.out)
    }
}

/// Writes a synthetic corpus (and optionally planted retrieval lists) into a
/// temp dir and returns a default config pointing at it.
pub fn fixture(queries: usize, test_queries: usize, planted: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(queries, test_queries);
    write_synthetic(dir.path(), &corpus).unwrap();
    if planted {
        let lists = planted_retrievals(&corpus, SynthConfig::default().distractors_per_query);
        jsonl::write(&dir.path().join("retrieval.jsonl"), &lists).unwrap();
    }
    let config = PipelineConfig::new(Paths {
        queries: "queries.jsonl".into(),
        docs: "docs.jsonl".into(),
        test_queries: (test_queries > 0).then(|| "test_queries.jsonl".into()),
        embeddings: None,
        retrieval: planted.then(|| "retrieval.jsonl".into()),
        prompts: None,
        out: "out".into(),
    });
    Fixture { dir, config }
}

/// Relative path → bytes for every file under `root`, skipping `logs/`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            if rel == "logs" {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
