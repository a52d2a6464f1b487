//! Generator-side difficulty levels.
//!
//! Easy: golden document, its query-enhanced rewrite, then retrieved fill.
//! Common: the retrieved top-k as is. Hard: Common with one slot replaced by
//! an irrelevant document from another query or a counterfactual rewrite.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{contains_answer, normalize_answer, DocStore, DocumentRecord, Origin, QueryRecord, RetrievalList};
use crate::eval::{aggregate, EvalReport, QueryEvalRow};
use crate::genclient::{
    build_prompt, generate_answer, rewrite, rewritten_doc_id, GenError, GeneratorBackend, PromptParts, RewriteMode,
    RewriteTemplates,
};
use crate::jsonl::{self, JsonlError};
use crate::seeds::rng_for;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("query {query_id}: retrieval list has {len} usable documents, need {k}")]
    ShortRetrieval { query_id: String, len: usize, k: usize },
    #[error("query {0}: no retrieval list")]
    MissingRetrieval(String),
    #[error("query {query_id}: retrieved document {doc_id} is not in the document store")]
    MissingDoc { query_id: String, doc_id: String },
    #[error("query {0}: no golden document")]
    MissingGolden(String),
    #[error("query {0}: cross pool has no document from another query without this query's answer")]
    EmptyCrossPool(String),
    #[error("k = {0} is too small for the Easy level (need at least 2)")]
    KTooSmall(usize),
    #[error("level {0:?} has no examples")]
    MissingLevel(DifficultyLevel),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyLevel {
    Easy,
    Common,
    Hard,
}

impl DifficultyLevel {
    pub const ALL: [DifficultyLevel; 3] = [Self::Easy, Self::Common, Self::Hard];

    pub fn stage(self) -> u8 {
        match self {
            Self::Easy => 1,
            Self::Common => 2,
            Self::Hard => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Irrelevant,
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorExample {
    pub query_id: String,
    pub question: String,
    pub docs: Vec<DocumentRecord>,
    pub gold_answers: Vec<String>,
    pub level: DifficultyLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_slot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl GeneratorExample {
    pub fn answer_doc_count(&self) -> usize {
        self.docs.iter().filter(|d| contains_answer(d, &self.gold_answers)).count()
    }
}

/// Documents retrieved for each query, keyed by doc_id with the owning queries.
#[derive(Debug, Clone, Default)]
pub struct CrossPool {
    owners: BTreeMap<String, BTreeSet<String>>,
}

impl CrossPool {
    /// Top-`k` documents of every list.
    pub fn from_retrievals<'a>(lists: impl IntoIterator<Item = &'a RetrievalList>, k: usize) -> Self {
        let mut owners: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for list in lists {
            for id in list.doc_ids().take(k) {
                owners.entry(id.to_string()).or_default().insert(list.query_id.clone());
            }
        }
        Self { owners }
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    /// Candidates for injection into `query`: retrieved for some other query,
    /// not already in `exclude`, and free of the query's answers.
    fn eligible<'s>(
        &self,
        query: &QueryRecord,
        exclude: &HashSet<&str>,
        store: &'s DocStore,
    ) -> Vec<&'s DocumentRecord> {
        self.owners
            .iter()
            .filter(|(id, owners)| owners.iter().any(|o| *o != query.query_id) && !exclude.contains(id.as_str()))
            .filter_map(|(id, _)| store.get(id))
            .filter(|d| !contains_answer(d, &query.gold_answers))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub queries: usize,
    pub easy_skipped_missing_golden: Vec<String>,
    pub easy_rewrite_fallbacks: usize,
    pub hard_irrelevant: usize,
    pub hard_counterfactual: usize,
    /// Counterfactual draws that broke the rewrite contract and became irrelevant.
    pub hard_counterfactual_fallbacks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSets {
    pub easy: Vec<GeneratorExample>,
    pub common: Vec<GeneratorExample>,
    pub hard: Vec<GeneratorExample>,
}

impl LevelSets {
    pub fn level(&self, level: DifficultyLevel) -> &[GeneratorExample] {
        match level {
            DifficultyLevel::Easy => &self.easy,
            DifficultyLevel::Common => &self.common,
            DifficultyLevel::Hard => &self.hard,
        }
    }
}

pub struct Augmenter<'a> {
    pub store: &'a DocStore,
    pub backend: &'a dyn GeneratorBackend,
    pub templates: &'a RewriteTemplates,
    pub k: usize,
    pub seed: u64,
    pub rewrite_attempts: usize,
}

enum Built {
    Example(GeneratorExample),
    EasyFallback(GeneratorExample),
    HardCounterfactualFallback(GeneratorExample),
}

impl Built {
    fn into_example(self) -> GeneratorExample {
        match self {
            Built::Example(e) | Built::EasyFallback(e) | Built::HardCounterfactualFallback(e) => e,
        }
    }
}

impl<'a> Augmenter<'a> {
    fn top_k(&self, query: &QueryRecord, retrieved: &RetrievalList) -> Result<Vec<DocumentRecord>, AugmentError> {
        if retrieved.len() < self.k {
            return Err(AugmentError::ShortRetrieval {
                query_id: query.query_id.clone(),
                len: retrieved.len(),
                k: self.k,
            });
        }
        retrieved
            .doc_ids()
            .take(self.k)
            .map(|id| self.fetch(query, id))
            .collect()
    }

    fn fetch(&self, query: &QueryRecord, doc_id: &str) -> Result<DocumentRecord, AugmentError> {
        let doc = self.store.get(doc_id).ok_or_else(|| AugmentError::MissingDoc {
            query_id: query.query_id.clone(),
            doc_id: doc_id.to_string(),
        })?;
        Ok(doc.clone().with_origin(Origin::Retrieved))
    }

    fn example(&self, query: &QueryRecord, docs: Vec<DocumentRecord>, level: DifficultyLevel) -> GeneratorExample {
        GeneratorExample {
            query_id: query.query_id.clone(),
            question: query.question.clone(),
            docs,
            gold_answers: query.gold_answers.clone(),
            level,
            perturbed_slot: None,
            perturbation: None,
        }
    }

    pub fn build_common(&self, query: &QueryRecord, retrieved: &RetrievalList) -> Result<GeneratorExample, AugmentError> {
        let docs = self.top_k(query, retrieved)?;
        Ok(self.example(query, docs, DifficultyLevel::Common))
    }

    pub fn build_easy(&self, query: &QueryRecord, retrieved: &RetrievalList) -> Result<GeneratorExample, AugmentError> {
        self.easy(query, retrieved).map(Built::into_example)
    }

    fn easy(&self, query: &QueryRecord, retrieved: &RetrievalList) -> Result<Built, AugmentError> {
        if self.k < 2 {
            return Err(AugmentError::KTooSmall(self.k));
        }
        let golden = query
            .golden_doc
            .clone()
            .ok_or_else(|| AugmentError::MissingGolden(query.query_id.clone()))?
            .with_origin(Origin::Golden);
        let (enhanced, fell_back) = match rewrite(
            &query.query_id,
            &golden,
            RewriteMode::QueryEnhanced,
            &query.question,
            &query.gold_answers,
            self.templates,
            self.rewrite_attempts,
            self.backend,
        ) {
            Ok(doc) => (doc, false),
            Err(GenError::RewriteContract { .. }) => {
                let mut copy = golden.clone().with_origin(Origin::RewrittenQueryEnhancedFallback);
                copy.doc_id = rewritten_doc_id(&golden.doc_id, RewriteMode::QueryEnhanced);
                (copy, true)
            }
            Err(e) => return Err(e.into()),
        };

        let golden_norm = normalize_answer(&golden.text);
        let mut docs = vec![golden.clone(), enhanced];
        for id in retrieved.doc_ids() {
            if docs.len() == self.k {
                break;
            }
            let doc = self.fetch(query, id)?;
            if doc.doc_id == golden.doc_id || normalize_answer(&doc.text) == golden_norm {
                continue;
            }
            docs.push(doc);
        }
        if docs.len() < self.k {
            return Err(AugmentError::ShortRetrieval {
                query_id: query.query_id.clone(),
                len: docs.len(),
                k: self.k,
            });
        }
        let ex = self.example(query, docs, DifficultyLevel::Easy);
        Ok(if fell_back { Built::EasyFallback(ex) } else { Built::Example(ex) })
    }

    fn inject(
        &self,
        query: &QueryRecord,
        docs: &[DocumentRecord],
        pool: &CrossPool,
        rng: &mut impl Rng,
    ) -> Result<DocumentRecord, AugmentError> {
        let exclude: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        let eligible = pool.eligible(query, &exclude, self.store);
        if eligible.is_empty() {
            return Err(AugmentError::EmptyCrossPool(query.query_id.clone()));
        }
        let pick = eligible[rng.random_range(0..eligible.len())];
        Ok(pick.clone().with_origin(Origin::InjectedIrrelevant))
    }

    fn counterfactual(&self, query: &QueryRecord, doc: &DocumentRecord) -> Result<Option<DocumentRecord>, AugmentError> {
        match rewrite(
            &query.query_id,
            doc,
            RewriteMode::Counterfactual,
            &query.question,
            &query.gold_answers,
            self.templates,
            self.rewrite_attempts,
            self.backend,
        ) {
            Ok(d) => Ok(Some(d)),
            Err(GenError::RewriteContract { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn build_hard(
        &self,
        query: &QueryRecord,
        retrieved: &RetrievalList,
        pool: &CrossPool,
    ) -> Result<GeneratorExample, AugmentError> {
        self.hard(query, retrieved, pool).map(Built::into_example)
    }

    fn hard(&self, query: &QueryRecord, retrieved: &RetrievalList, pool: &CrossPool) -> Result<Built, AugmentError> {
        let mut docs = self.top_k(query, retrieved)?;
        let mut rng = rng_for(self.seed, &[&query.query_id, "hard"]);
        let slot = rng.random_range(0..self.k);
        let irrelevant = rng.random_bool(0.5);
        let injected = self.inject(query, &docs, pool, &mut rng)?;

        let (replacement, perturbation, fell_back) = if irrelevant {
            (injected, Perturbation::Irrelevant, false)
        } else {
            match self.counterfactual(query, &docs[slot])? {
                Some(cf) => (cf, Perturbation::Counterfactual, false),
                None => (injected, Perturbation::Irrelevant, true),
            }
        };
        docs[slot] = replacement;
        let mut ex = self.example(query, docs, DifficultyLevel::Hard);
        ex.perturbed_slot = Some(slot);
        ex.perturbation = Some(perturbation);
        Ok(if fell_back { Built::HardCounterfactualFallback(ex) } else { Built::Example(ex) })
    }

    /// One perturbation of the requested kind per query. `Ok(None)` means no
    /// slot could be rewritten counterfactually and the query is skipped.
    pub fn build_robustness(
        &self,
        query: &QueryRecord,
        retrieved: &RetrievalList,
        pool: &CrossPool,
        mode: Perturbation,
    ) -> Result<Option<GeneratorExample>, AugmentError> {
        let mut docs = self.top_k(query, retrieved)?;
        let tag = match mode {
            Perturbation::Irrelevant => "irrelevant",
            Perturbation::Counterfactual => "counterfactual",
        };
        let mut rng = rng_for(self.seed, &[&query.query_id, "robustness", tag]);
        let (slot, replacement) = match mode {
            Perturbation::Irrelevant => {
                let slot = rng.random_range(0..self.k);
                (slot, self.inject(query, &docs, pool, &mut rng)?)
            }
            Perturbation::Counterfactual => {
                let mut order: Vec<usize> = (0..self.k).collect();
                order.shuffle(&mut rng);
                let mut found = None;
                for slot in order {
                    if let Some(cf) = self.counterfactual(query, &docs[slot])? {
                        found = Some((slot, cf));
                        break;
                    }
                }
                match found {
                    Some(f) => f,
                    None => return Ok(None),
                }
            }
        };
        docs[slot] = replacement;
        let mut ex = self.example(query, docs, DifficultyLevel::Hard);
        ex.perturbed_slot = Some(slot);
        ex.perturbation = Some(mode);
        Ok(Some(ex))
    }

    /// Builds all three levels. Output order follows `queries`.
    pub fn build_level_sets(
        &self,
        queries: &[QueryRecord],
        retrievals: &HashMap<String, RetrievalList>,
    ) -> Result<(LevelSets, AugmentReport), AugmentError> {
        let pool = CrossPool::from_retrievals(retrievals.values(), self.k);
        let per_query: Vec<(Option<Built>, GeneratorExample, Built)> = queries
            .par_iter()
            .map(|q| {
                let list = retrievals
                    .get(&q.query_id)
                    .ok_or_else(|| AugmentError::MissingRetrieval(q.query_id.clone()))?;
                let easy = match self.easy(q, list) {
                    Ok(b) => Some(b),
                    Err(AugmentError::MissingGolden(_)) => None,
                    Err(e) => return Err(e),
                };
                Ok((easy, self.build_common(q, list)?, self.hard(q, list, &pool)?))
            })
            .collect::<Result<_, AugmentError>>()?;

        let mut sets = LevelSets::default();
        let mut report = AugmentReport {
            queries: queries.len(),
            ..Default::default()
        };
        for (q, (easy, common, hard)) in queries.iter().zip(per_query) {
            match easy {
                None => report.easy_skipped_missing_golden.push(q.query_id.clone()),
                Some(b) => {
                    report.easy_rewrite_fallbacks += usize::from(matches!(b, Built::EasyFallback(_)));
                    sets.easy.push(b.into_example());
                }
            }
            sets.common.push(common);
            report.hard_counterfactual_fallbacks += usize::from(matches!(hard, Built::HardCounterfactualFallback(_)));
            let hard = hard.into_example();
            match hard.perturbation {
                Some(Perturbation::Counterfactual) => report.hard_counterfactual += 1,
                _ => report.hard_irrelevant += 1,
            }
            sets.hard.push(hard);
        }
        Ok((sets, report))
    }

    /// Perturbed test set for one mode plus the ids of skipped queries.
    pub fn build_robustness_testset(
        &self,
        queries: &[QueryRecord],
        retrievals: &HashMap<String, RetrievalList>,
        mode: Perturbation,
    ) -> Result<(Vec<GeneratorExample>, Vec<String>), AugmentError> {
        let pool = CrossPool::from_retrievals(retrievals.values(), self.k);
        let built: Vec<Option<GeneratorExample>> = queries
            .par_iter()
            .map(|q| {
                let list = retrievals
                    .get(&q.query_id)
                    .ok_or_else(|| AugmentError::MissingRetrieval(q.query_id.clone()))?;
                self.build_robustness(q, list, &pool, mode)
            })
            .collect::<Result<_, AugmentError>>()?;
        let mut out = Vec::new();
        let mut skipped = Vec::new();
        for (q, b) in queries.iter().zip(built) {
            match b {
                Some(ex) => out.push(ex),
                None => skipped.push(q.query_id.clone()),
            }
        }
        Ok((out, skipped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAssessment {
    pub level: DifficultyLevel,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub recall_at_1: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub n_queries: usize,
    /// Queries whose answer generation failed at the backend.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub k: usize,
    pub levels: Vec<LevelAssessment>,
}

impl DifficultyReport {
    pub fn level(&self, level: DifficultyLevel) -> Option<&LevelAssessment> {
        self.levels.iter().find(|l| l.level == level)
    }
}

pub fn assess_level(
    examples: &[GeneratorExample],
    k: usize,
    parts: &PromptParts,
    backend: &dyn GeneratorBackend,
) -> (EvalReport, Vec<String>) {
    let rows: Vec<(QueryEvalRow, bool)> = examples
        .par_iter()
        .map(|ex| {
            let answer = generate_answer(&ex.query_id, &ex.question, &ex.docs, &ex.gold_answers, parts, backend);
            if let Err(e) = &answer {
                tracing::warn!(query_id = %ex.query_id, error = %e, "answer generation failed");
            }
            let row = QueryEvalRow::score(&ex.query_id, answer.as_deref().ok(), &ex.docs, &ex.gold_answers, &[1, k]);
            (row, answer.is_err())
        })
        .collect();
    let skipped = rows
        .iter()
        .filter(|(_, failed)| *failed)
        .map(|(r, _)| r.query_id.clone())
        .collect();
    (aggregate(rows.into_iter().map(|(r, _)| r).collect()), skipped)
}

/// Per-level EM/F1 from generated answers and R@1/R@k from the level's docs.
pub fn assess_difficulty(
    sets: &LevelSets,
    k: usize,
    parts: &PromptParts,
    backend: &dyn GeneratorBackend,
) -> DifficultyReport {
    let levels = DifficultyLevel::ALL
        .iter()
        .map(|&level| {
            let (report, skipped) = assess_level(sets.level(level), k, parts, backend);
            LevelAssessment {
                level,
                em: report.em,
                f1: report.f1,
                recall_at_1: report.recall_at.get(&1).copied(),
                recall_at_k: report.recall_at.get(&k).copied(),
                n_queries: report.n_queries,
                skipped,
            }
        })
        .collect();
    DifficultyReport { k, levels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub instruction: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftManifest {
    pub stage_order: Vec<u8>,
    pub files: Vec<String>,
    pub records: Vec<usize>,
    pub seeds: BTreeMap<String, u64>,
}

pub fn sft_records(examples: &[GeneratorExample], parts: &PromptParts) -> Result<Vec<SftRecord>, AugmentError> {
    examples
        .iter()
        .map(|ex| {
            let prompt = build_prompt(&ex.docs, &ex.question, parts)?;
            Ok(SftRecord {
                system: prompt.system,
                instruction: prompt.user,
                output: ex.gold_answers[0].clone(),
            })
        })
        .collect()
}

/// Writes `stage{1,2,3}.jsonl` and `manifest.json` into `dir`.
pub fn emit_sft(
    sets: &LevelSets,
    parts: &PromptParts,
    dir: &Path,
    seeds: BTreeMap<String, u64>,
) -> Result<SftManifest, AugmentError> {
    parts.validate()?;
    for level in DifficultyLevel::ALL {
        if sets.level(level).is_empty() {
            return Err(AugmentError::MissingLevel(level));
        }
    }
    let mut manifest = SftManifest {
        stage_order: Vec::new(),
        files: Vec::new(),
        records: Vec::new(),
        seeds,
    };
    for level in DifficultyLevel::ALL {
        let name = format!("stage{}.jsonl", level.stage());
        let records = sft_records(sets.level(level), parts)?;
        jsonl::write(&dir.join(&name), &records)?;
        manifest.stage_order.push(level.stage());
        manifest.files.push(name);
        manifest.records.push(records.len());
    }
    let path: PathBuf = dir.join("manifest.json");
    let body = serde_json::to_vec_pretty(&manifest).map_err(JsonlError::Serialize)?;
    std::fs::write(&path, body).map_err(|source| JsonlError::Io { path, source })?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub set: String,
    pub query_id: String,
    pub message: String,
}

fn same_doc(a: &DocumentRecord, b: &DocumentRecord) -> bool {
    a.doc_id == b.doc_id && a.text == b.text
}

/// Slots where the two lists differ, or `None` when the lengths differ.
pub fn hamming(a: &[DocumentRecord], b: &[DocumentRecord]) -> Option<usize> {
    (a.len() == b.len()).then(|| a.iter().zip(b).filter(|(x, y)| !same_doc(x, y)).count())
}

fn check_example(ex: &GeneratorExample, k: usize, common: Option<&GeneratorExample>) -> Vec<String> {
    let mut errs = Vec::new();
    if ex.docs.len() != k {
        errs.push(format!("{} documents, expected {k}", ex.docs.len()));
    }
    for d in &ex.docs {
        if d.origin == Origin::RewrittenCounterfactual && contains_answer(d, &ex.gold_answers) {
            errs.push(format!("counterfactual document {} contains a gold answer", d.doc_id));
        }
    }
    match ex.level {
        DifficultyLevel::Easy => {
            let n = ex.answer_doc_count();
            if n < 2 {
                errs.push(format!("{n} answer-bearing documents, need at least 2"));
            }
        }
        DifficultyLevel::Common => {
            if ex.docs.iter().any(|d| d.origin != Origin::Retrieved) {
                errs.push("document with origin other than retrieved".into());
            }
            if ex.perturbed_slot.is_some() || ex.perturbation.is_some() {
                errs.push("perturbation recorded on a Common example".into());
            }
        }
        DifficultyLevel::Hard => {
            let perturbed: Vec<usize> = ex
                .docs
                .iter()
                .enumerate()
                .filter(|(_, d)| matches!(d.origin, Origin::InjectedIrrelevant | Origin::RewrittenCounterfactual))
                .map(|(i, _)| i)
                .collect();
            if perturbed.len() != 1 || ex.perturbed_slot != perturbed.first().copied() {
                errs.push(format!(
                    "perturbed documents at {perturbed:?}, recorded slot {:?}",
                    ex.perturbed_slot
                ));
            }
            let expected = match ex.perturbation {
                Some(Perturbation::Irrelevant) => Some(Origin::InjectedIrrelevant),
                Some(Perturbation::Counterfactual) => Some(Origin::RewrittenCounterfactual),
                None => None,
            };
            if let (Some(slot), Some(origin)) = (ex.perturbed_slot, expected) {
                if ex.docs.get(slot).map(|d| d.origin) != Some(origin) {
                    errs.push(format!("slot {slot} origin does not match {:?}", ex.perturbation));
                }
            } else {
                errs.push("Hard example without perturbation record".into());
            }
            match common.map(|c| hamming(&ex.docs, &c.docs)) {
                None => errs.push("no Common counterpart".into()),
                Some(Some(1)) => {}
                Some(d) => errs.push(format!("Hamming distance to Common is {d:?}, expected 1")),
            }
        }
    }
    errs
}

/// Checks every example in `sets` plus any perturbed test sets against the
/// construction invariants. Perturbed sets are compared with `sets.common`.
pub fn validate_sets(sets: &LevelSets, perturbed: &[(&str, &[GeneratorExample])], k: usize) -> Vec<Violation> {
    let common: HashMap<&str, &GeneratorExample> = sets.common.iter().map(|e| (e.query_id.as_str(), e)).collect();
    let mut named: Vec<(&str, &[GeneratorExample])> =
        vec![("easy", &sets.easy), ("common", &sets.common), ("hard", &sets.hard)];
    named.extend_from_slice(perturbed);
    let mut out = Vec::new();
    for (name, examples) in named {
        for ex in examples {
            let counterpart = common.get(ex.query_id.as_str()).copied();
            for message in check_example(ex, k, counterpart) {
                out.push(Violation {
                    set: name.to_string(),
                    query_id: ex.query_id.clone(),
                    message,
                });
            }
        }
    }
    out
}
