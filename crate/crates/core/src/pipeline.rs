//! File-based pipeline: each step reads upstream artifacts under the output
//! directory, writes its own, and records a manifest with the config hash and
//! input/output digests so unchanged reruns are skipped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{
    self, assess_level, AugmentError, AugmentReport, Augmenter, DifficultyReport, GeneratorExample, LevelSets,
    Perturbation,
};
use crate::corpus::{self, CorpusError, DocStore, DocumentRecord, QueryRecord, RetrievalList};
use crate::curriculum::{
    self, build_stage_dataset, rank_gap_stats, validate_schedules, CurriculumError, RankGapStats,
    RetrieverTrainingInstance, StageDataset, StageSchedule,
};
use crate::eval::{aggregate, EvalReport, QueryEvalRow};
use crate::genclient::{
    generate_answer, score_with_context, score_without_context, BackendConfig, GenError, GeneratorBackend,
    PromptParts, RewriteTemplates, UtilityScore,
};
use crate::jsonl::{self, JsonlError};
use crate::rerank::{rerank_documents, RerankError, RerankedList};
use crate::retrieval::{
    encode, featurize, top_n, EmbeddingVector, EncoderFile, EncoderParams, FeatureSpec, PrecomputedEmbeddingStore,
    RetrievalError,
};
use crate::seeds::derive_seed;
use crate::train::{train_curriculum, FeatureTable, StageReport, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: String, producer: &'static str },
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    /// 1 validation, 2 missing upstream artifact, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::MissingArtifact { .. } => 2,
            Self::Backend(_) => 3,
            _ => 1,
        }
    }
}

impl From<GenError> for PipelineError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Transport { .. } | GenError::Capability(_) => Self::Backend(e.to_string()),
            GenError::Config(m) => Self::Config(m),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<AugmentError> for PipelineError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Gen(g) => g.into(),
            other => Self::Validation(other.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                Self::Validation(e.to_string())
            }
        }
    )*};
}
validation_from!(CorpusError, CurriculumError, RerankError, RetrievalError, TrainError, JsonlError);

type Result<T> = std::result::Result<T, PipelineError>;

fn default_k() -> usize {
    curriculum::DEFAULT_K
}
fn default_n() -> usize {
    curriculum::DEFAULT_N
}
fn default_attempts() -> usize {
    3
}
fn default_buckets() -> usize {
    4096
}
fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub queries: PathBuf,
    pub docs: PathBuf,
    /// Evaluation queries; the training queries are reused when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_queries: Option<PathBuf>,
    /// Precomputed query and document vectors used for retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Precomputed retrieval lists, used verbatim instead of retrieving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<PathBuf>,
    /// Directory holding inference.txt and the rewrite templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSettings {
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            buckets: default_buckets(),
            dim: default_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "curriculum::default_schedules")]
    pub schedules: Vec<StageSchedule>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default = "default_attempts")]
    pub rewrite_attempts: usize,
}

impl PipelineConfig {
    pub fn new(paths: Paths) -> Self {
        Self {
            paths,
            k: default_k(),
            n: default_n(),
            schedules: curriculum::default_schedules(),
            backend: BackendConfig::default(),
            seed: 0,
            train: TrainConfig::default(),
            encoder: EncoderSettings::default(),
            rewrite_attempts: default_attempts(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Hash of the configuration with the output directory blanked.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(canonical_json(&self.hashed_view())))
    }

    fn hashed_view(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.paths.out = PathBuf::new();
        c
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("global".to_string(), self.seed),
            ("encoder_init".to_string(), derive_seed(self.seed, &["encoder"])),
            ("augment".to_string(), derive_seed(self.seed, &["augment"])),
            ("robustness".to_string(), derive_seed(self.seed, &["robustness"])),
            ("stages".to_string(), derive_seed(self.seed, &["stages"])),
            ("train".to_string(), derive_seed(self.seed, &["train", &self.train.seed.to_string()])),
        ])
    }

    fn seed_for(&self, name: &str) -> u64 {
        self.seeds()[name]
    }

    fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed_for("train"),
            ..self.train
        }
    }

    /// Field-level checks; an empty list means the config is usable.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push("k: must be at least 1".to_string());
        }
        if self.k < 2 {
            errs.push("k: Easy examples need k >= 2".to_string());
        }
        if self.n < self.k {
            errs.push(format!("n: must be >= k ({}), got {}", self.k, self.n));
        }
        if let Err(e) = validate_schedules(&self.schedules, self.k, self.n) {
            errs.push(format!("schedules: {e}"));
        }
        if let Err(e) = self.train.validate() {
            errs.push(format!("train: {e}"));
        }
        if self.schedules.len() * self.train.passes_per_stage != self.train.epochs {
            errs.push(format!(
                "train.epochs: {} stages x {} passes_per_stage = {}, but epochs = {}",
                self.schedules.len(),
                self.train.passes_per_stage,
                self.schedules.len() * self.train.passes_per_stage,
                self.train.epochs
            ));
        }
        if self.encoder.buckets == 0 || self.encoder.dim == 0 {
            errs.push("encoder: buckets and dim must be positive".to_string());
        }
        if self.rewrite_attempts == 0 {
            errs.push("rewrite_attempts: must be at least 1".to_string());
        }
        errs
    }
}

fn canonical_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config serializes")
}

fn sha256_file(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| hex::encode(Sha256::digest(b)))
}

/// Pipeline steps in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Ingest,
    Retrieve,
    Augment,
    EmitSft,
    Score,
    Rerank,
    BuildStages,
    Train,
    Evaluate,
    Robustness,
    Report,
}

impl Step {
    pub const ALL: [Step; 11] = [
        Step::Ingest,
        Step::Retrieve,
        Step::Augment,
        Step::EmitSft,
        Step::Score,
        Step::Rerank,
        Step::BuildStages,
        Step::Train,
        Step::Evaluate,
        Step::Robustness,
        Step::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Ingest => "ingest",
            Step::Retrieve => "retrieve",
            Step::Augment => "augment",
            Step::EmitSft => "emit-sft",
            Step::Score => "score",
            Step::Rerank => "rerank",
            Step::BuildStages => "build-stages",
            Step::Train => "train",
            Step::Evaluate => "evaluate",
            Step::Robustness => "robustness",
            Step::Report => "report",
        }
    }
}

// Artifact paths relative to the output directory.
pub const QUERIES: &str = "corpus/queries.jsonl";
pub const TEST_QUERIES: &str = "corpus/test_queries.jsonl";
pub const DOCS: &str = "corpus/docs.jsonl";
pub const RETRIEVAL: &str = "retrieval.jsonl";
pub const ENCODER_INIT: &str = "encoder_init.json";
pub const AUGMENT_REPORT: &str = "generator_curriculum/augment_report.json";
pub const DIFFICULTY_REPORT: &str = "generator_curriculum/difficulty_report.json";
pub const SCORES: &str = "scores.jsonl";
pub const RERANKED: &str = "reranked.jsonl";
pub const STAGES_MANIFEST: &str = "stages/manifest.json";
pub const TRAINING_REPORT: &str = "training_report.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_REPORT_INITIAL: &str = "eval_report_initial.json";
pub const ROBUSTNESS_REPORT: &str = "robustness/report.json";
pub const ROBUSTNESS_CLEAN: &str = "robustness/clean.jsonl";
pub const REPORT: &str = "report.json";
pub const SFT_MANIFEST: &str = "sft/manifest.json";

pub fn generator_stage_file(stage: u8) -> String {
    format!("generator_curriculum/stage{stage}.jsonl")
}
pub fn sft_stage_file(stage: u8) -> String {
    format!("sft/stage{stage}.jsonl")
}
pub fn stage_file(stage: usize) -> String {
    format!("stages/stage{stage}.jsonl")
}
pub fn checkpoint_file(stage: usize) -> String {
    format!("checkpoints/stage{stage}.json")
}
pub fn robustness_file(mode: Perturbation) -> String {
    match mode {
        Perturbation::Irrelevant => "robustness/irrelevant.jsonl".into(),
        Perturbation::Counterfactual => "robustness/counterfactual.jsonl".into(),
    }
}

/// Which step writes an artifact, for dependency errors.
pub fn producer_of(rel: &str) -> &'static str {
    let step = if rel.starts_with("corpus/") {
        Step::Ingest
    } else if rel == RETRIEVAL || rel == ENCODER_INIT {
        Step::Retrieve
    } else if rel.starts_with("generator_curriculum/") {
        Step::Augment
    } else if rel.starts_with("sft/") {
        Step::EmitSft
    } else if rel == SCORES {
        Step::Score
    } else if rel == RERANKED {
        Step::Rerank
    } else if rel.starts_with("stages/") {
        Step::BuildStages
    } else if rel.starts_with("checkpoints/") || rel == TRAINING_REPORT {
        Step::Train
    } else if rel.starts_with("eval_report") {
        Step::Evaluate
    } else if rel.starts_with("robustness/") {
        Step::Robustness
    } else {
        Step::Report
    };
    step.name()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub step: Step,
    pub skipped: bool,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub query_id: String,
    /// Empty for the no-context baseline.
    pub doc_id: String,
    pub answer_rank: u32,
    pub answer_logprob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub encoder: EncoderFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub stage_order: Vec<usize>,
    pub seed: u64,
    pub config: TrainConfig,
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagesManifest {
    pub seed: u64,
    pub n: usize,
    pub schedules: Vec<StageSchedule>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSetReport {
    /// None for the unperturbed top-k baseline.
    pub mode: Option<Perturbation>,
    pub examples: usize,
    pub skipped: Vec<String>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub generation_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGapRow {
    pub stage: usize,
    #[serde(flatten)]
    pub stats: RankGapStats,
}

/// Aggregates without per-query rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            em: r.em,
            f1: r.f1,
            recall_at: r.recall_at.clone(),
            n_queries: r.n_queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedReport {
    pub config_hash: String,
    pub difficulty: DifficultyReport,
    pub augment: AugmentReport,
    pub rank_gaps: Vec<StageGapRow>,
    pub training: TrainingReport,
    pub eval_trained: EvalSummary,
    pub eval_initial: EvalSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robustness: Vec<RobustnessSetReport>,
}

/// Config-level checks plus, when present, construction invariants of the
/// emitted generator and robustness sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub failures: Vec<String>,
    pub checked_files: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    /// Base for relative input paths.
    pub base: PathBuf,
    pub out: PathBuf,
    /// Ignore manifests and recompute.
    pub force: bool,
    /// Upper bound on worker threads, including backend requests in flight.
    pub jobs: usize,
}

struct Inputs {
    queries: Vec<QueryRecord>,
    test_queries: Vec<QueryRecord>,
    store: DocStore,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, base: impl Into<PathBuf>) -> Result<Self> {
        let errs = config.check();
        if !errs.is_empty() {
            return Err(PipelineError::Config(errs.join("; ")));
        }
        let base = base.into();
        let out = resolve(&base, &config.paths.out);
        Ok(Self {
            config,
            base,
            out,
            force: false,
            jobs: rayon::current_num_threads(),
        })
    }

    fn input_path(&self, p: &Path) -> PathBuf {
        resolve(&self.base, p)
    }

    fn artifact(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.artifact(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact {
                path: rel.to_string(),
                producer: producer_of(rel),
            })
        }
    }

    fn read_jsonl<T: DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>> {
        let p = self.require(rel)?;
        Ok(jsonl::read(&p)?.into_iter().map(|(_, v)| v).collect())
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let p = self.require(rel)?;
        let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))
    }

    fn write_jsonl<'a, T: Serialize + 'a>(&self, rel: &str, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
        jsonl::write(&self.artifact(rel), rows)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        write_json_file(&self.artifact(rel), value)
    }

    fn backend(&self) -> Result<Box<dyn GeneratorBackend>> {
        Ok(self.config.backend.build()?)
    }

    fn prompt_parts(&self) -> Result<PromptParts> {
        match &self.config.paths.prompts {
            Some(dir) => Ok(PromptParts::load(&self.input_path(dir).join("inference.txt"))?),
            None => Ok(PromptParts::default()),
        }
    }

    fn templates(&self) -> Result<RewriteTemplates> {
        match &self.config.paths.prompts {
            Some(dir) => Ok(RewriteTemplates::load_dir(&self.input_path(dir))?),
            None => Ok(RewriteTemplates::default()),
        }
    }

    fn prompt_inputs(&self) -> Vec<(String, PathBuf)> {
        match &self.config.paths.prompts {
            Some(dir) => ["inference.txt", "rewrite_query_enhanced.txt", "rewrite_counterfactual.txt"]
                .iter()
                .map(|f| (format!("prompts/{f}"), self.input_path(dir).join(f)))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Runs `f` on a pool no wider than the backend allows.
    fn with_backend_pool<T: Send>(&self, backend: &dyn GeneratorBackend, f: impl FnOnce() -> T + Send) -> Result<T> {
        let threads = self.jobs.min(backend.max_parallel()).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }

    fn load_inputs(&self) -> Result<Inputs> {
        Ok(Inputs {
            queries: self.read_jsonl(QUERIES)?,
            test_queries: self.read_jsonl(TEST_QUERIES)?,
            store: {
                let mut store = DocStore::new();
                for d in self.read_jsonl::<DocumentRecord>(DOCS)? {
                    store.insert(d)?;
                }
                store
            },
        })
    }

    fn retrievals(&self) -> Result<HashMap<String, RetrievalList>> {
        Ok(self
            .read_jsonl::<RetrievalList>(RETRIEVAL)?
            .into_iter()
            .map(|l| (l.query_id.clone(), l))
            .collect())
    }

    fn init_encoder(&self) -> EncoderParams {
        EncoderParams::random(self.config.encoder.buckets, self.config.encoder.dim, self.config.seed_for("encoder_init"))
    }

    fn manifest_path(&self, step: Step) -> PathBuf {
        self.out.join("manifests").join(format!("{}.json", step.name()))
    }

    fn digest_inputs(&self, inputs: &[(String, PathBuf)]) -> Result<BTreeMap<String, String>> {
        inputs
            .iter()
            .map(|(label, path)| {
                let digest = sha256_file(path).ok_or_else(|| match path.strip_prefix(&self.out) {
                    Ok(rel) => {
                        let rel = rel.to_string_lossy().to_string();
                        PipelineError::MissingArtifact {
                            producer: producer_of(&rel),
                            path: rel,
                        }
                    }
                    Err(_) => PipelineError::Io {
                        path: path.display().to_string(),
                        message: "cannot read input".into(),
                    },
                })?;
                Ok((label.clone(), digest))
            })
            .collect()
    }

    fn upstream(&self, rels: &[&str]) -> Vec<(String, PathBuf)> {
        rels.iter().map(|r| (r.to_string(), self.artifact(r))).collect()
    }

    fn up_to_date(&self, step: Step, inputs: &BTreeMap<String, String>, backend: Option<&str>) -> bool {
        if self.force {
            return false;
        }
        let Ok(text) = std::fs::read_to_string(self.manifest_path(step)) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
            return false;
        };
        m.config_hash == self.config.hash()
            && &m.inputs == inputs
            && m.backend.as_deref() == backend
            && m.outputs
                .iter()
                .all(|(rel, digest)| sha256_file(&self.artifact(rel)).as_deref() == Some(digest.as_str()))
    }

    fn finish(
        &self,
        step: Step,
        inputs: BTreeMap<String, String>,
        backend: Option<String>,
        extra: BTreeMap<String, String>,
        outputs: &[String],
    ) -> Result<StepOutcome> {
        let digests = outputs
            .iter()
            .map(|rel| {
                let p = self.artifact(rel);
                sha256_file(&p).map(|d| (rel.clone(), d)).ok_or_else(|| PipelineError::Io {
                    path: p.display().to_string(),
                    message: "output missing after write".into(),
                })
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            step: step.name().to_string(),
            config_hash: self.config.hash(),
            config: self.config.hashed_view(),
            seeds: self.config.seeds(),
            backend,
            extra,
            inputs,
            outputs: digests,
        };
        write_json_file(&self.manifest_path(step), &manifest)?;
        Ok(StepOutcome {
            step,
            skipped: false,
            outputs: outputs.to_vec(),
        })
    }

    fn skipped(&self, step: Step) -> StepOutcome {
        tracing::info!(step = step.name(), "inputs unchanged, skipping");
        StepOutcome {
            step,
            skipped: true,
            outputs: Vec::new(),
        }
    }

    pub fn run(&self, step: Step) -> Result<StepOutcome> {
        tracing::info!(step = step.name(), "running");
        let started = Instant::now();
        let outcome = match step {
            Step::Ingest => self.ingest(),
            Step::Retrieve => self.retrieve(),
            Step::Augment => self.augment(),
            Step::EmitSft => self.emit_sft(),
            Step::Score => self.score(),
            Step::Rerank => self.rerank(),
            Step::BuildStages => self.build_stages(None),
            Step::Train => self.train(None),
            Step::Evaluate => self.evaluate(),
            Step::Robustness => self.robustness(),
            Step::Report => self.report(),
        }?;
        if !outcome.skipped {
            self.log_timing(step.name(), started.elapsed().as_secs_f64());
        }
        Ok(outcome)
    }

    pub fn run_all(&self) -> Result<Vec<StepOutcome>> {
        Step::ALL.iter().map(|&s| self.run(s)).collect()
    }

    /// Per-step wall time under logs/.
    fn log_timing(&self, name: &str, seconds: f64) {
        let path = self.out.join("logs/timing.json");
        let mut map: BTreeMap<String, f64> = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        map.insert(name.to_string(), seconds);
        if let Err(e) = write_json_file(&path, &map) {
            tracing::warn!(error = %e, "could not write timing log");
        }
    }

    fn ingest(&self) -> Result<StepOutcome> {
        let p = &self.config.paths;
        let mut sources = vec![
            ("paths.queries".to_string(), self.input_path(&p.queries)),
            ("paths.docs".to_string(), self.input_path(&p.docs)),
        ];
        if let Some(t) = &p.test_queries {
            sources.push(("paths.test_queries".to_string(), self.input_path(t)));
        }
        let inputs = self.digest_inputs(&sources)?;
        if self.up_to_date(Step::Ingest, &inputs, None) {
            return Ok(self.skipped(Step::Ingest));
        }
        let queries = corpus::load_queries(&self.input_path(&p.queries))?;
        let store = corpus::load_docs(&self.input_path(&p.docs))?;
        let test_queries = match &p.test_queries {
            Some(t) => corpus::load_queries(&self.input_path(t))?,
            None => queries.clone(),
        };
        if queries.is_empty() {
            return Err(PipelineError::Validation("no training queries".into()));
        }
        if store.len() < self.config.n {
            return Err(PipelineError::Validation(format!(
                "document store has {} documents, n = {}",
                store.len(),
                self.config.n
            )));
        }
        self.write_jsonl(QUERIES, &queries)?;
        self.write_jsonl(TEST_QUERIES, &test_queries)?;
        self.write_jsonl(DOCS, store.as_slice())?;
        self.finish(
            Step::Ingest,
            inputs,
            None,
            BTreeMap::new(),
            &[QUERIES.into(), TEST_QUERIES.into(), DOCS.into()],
        )
    }

    /// Training and test queries, deduplicated by id, training first.
    fn all_queries<'a>(&self, inputs: &'a Inputs) -> Vec<&'a QueryRecord> {
        let mut seen = HashSet::new();
        inputs
            .queries
            .iter()
            .chain(&inputs.test_queries)
            .filter(|q| seen.insert(q.query_id.as_str()))
            .collect()
    }

    fn retrieve(&self) -> Result<StepOutcome> {
        let mut sources = self.upstream(&[QUERIES, TEST_QUERIES, DOCS]);
        if let Some(e) = &self.config.paths.embeddings {
            sources.push(("paths.embeddings".into(), self.input_path(e)));
        }
        if let Some(r) = &self.config.paths.retrieval {
            sources.push(("paths.retrieval".into(), self.input_path(r)));
        }
        let inputs = self.digest_inputs(&sources)?;
        if self.up_to_date(Step::Retrieve, &inputs, None) {
            return Ok(self.skipped(Step::Retrieve));
        }
        let data = self.load_inputs()?;
        let queries = self.all_queries(&data);
        let n = self.config.n;
        let init = self.init_encoder();

        let lists: Vec<RetrievalList> = if let Some(r) = &self.config.paths.retrieval {
            let mut by_id: HashMap<String, RetrievalList> = corpus::load_retrievals(&self.input_path(r))?
                .into_iter()
                .map(|l| (l.query_id.clone(), l))
                .collect();
            queries
                .iter()
                .map(|q| {
                    let mut l = by_id.remove(&q.query_id).ok_or_else(|| {
                        PipelineError::Validation(format!("paths.retrieval has no list for query {}", q.query_id))
                    })?;
                    if l.len() < n {
                        return Err(PipelineError::Validation(format!(
                            "retrieval list for {} has {} entries, n = {n}",
                            q.query_id,
                            l.len()
                        )));
                    }
                    if let Some(missing) = l.doc_ids().find(|id| data.store.get(id).is_none()) {
                        return Err(PipelineError::Validation(format!(
                            "retrieval list for {} names unknown document {missing}",
                            q.query_id
                        )));
                    }
                    l.entries.truncate(n);
                    Ok(l)
                })
                .collect::<Result<_>>()?
        } else {
            let (doc_vecs, query_vecs): (Vec<(String, EmbeddingVector)>, Vec<EmbeddingVector>) =
                if let Some(e) = &self.config.paths.embeddings {
                    let emb = PrecomputedEmbeddingStore::load(&self.input_path(e))?;
                    let docs = data
                        .store
                        .iter()
                        .map(|d| Ok((d.doc_id.clone(), emb.get(&d.doc_id)?.clone())))
                        .collect::<std::result::Result<_, RetrievalError>>()?;
                    let qs = queries
                        .iter()
                        .map(|q| emb.get(&q.query_id).cloned())
                        .collect::<std::result::Result<_, _>>()?;
                    (docs, qs)
                } else {
                    let spec = init.feature_spec();
                    let docs = data
                        .store
                        .as_slice()
                        .par_iter()
                        .map(|d| Ok((d.doc_id.clone(), encode(&featurize(&d.text, &spec), &init)?)))
                        .collect::<std::result::Result<_, RetrievalError>>()?;
                    let qs = queries
                        .par_iter()
                        .map(|q| encode(&featurize(&q.question, &spec), &init))
                        .collect::<std::result::Result<_, _>>()?;
                    (docs, qs)
                };
            queries
                .iter()
                .zip(&query_vecs)
                .map(|(q, v)| top_n(&q.query_id, v, &doc_vecs, n).map_err(PipelineError::from))
                .collect::<Result<_>>()?
        };
        self.write_jsonl(RETRIEVAL, &lists)?;
        self.write_json(ENCODER_INIT, &init.to_file())?;
        self.finish(Step::Retrieve, inputs, None, BTreeMap::new(), &[RETRIEVAL.into(), ENCODER_INIT.into()])
    }

    fn augmenter<'a>(
        &self,
        store: &'a DocStore,
        backend: &'a dyn GeneratorBackend,
        templates: &'a RewriteTemplates,
        seed: u64,
    ) -> Augmenter<'a> {
        Augmenter {
            store,
            backend,
            templates,
            k: self.config.k,
            seed,
            rewrite_attempts: self.config.rewrite_attempts,
        }
    }

    fn augment(&self) -> Result<StepOutcome> {
        let mut sources = self.upstream(&[QUERIES, DOCS, RETRIEVAL]);
        sources.extend(self.prompt_inputs());
        let inputs = self.digest_inputs(&sources)?;
        let backend = self.backend()?;
        let fp = backend.fingerprint();
        if self.up_to_date(Step::Augment, &inputs, Some(&fp)) {
            return Ok(self.skipped(Step::Augment));
        }
        let data = self.load_inputs()?;
        let retrievals = self.retrievals()?;
        let templates = self.templates()?;
        let parts = self.prompt_parts()?;
        let aug = self.augmenter(&data.store, backend.as_ref(), &templates, self.config.seed_for("augment"));
        let (sets, report) = self.with_backend_pool(backend.as_ref(), || aug.build_level_sets(&data.queries, &retrievals))??;
        let difficulty = self.with_backend_pool(backend.as_ref(), || {
            augment::assess_difficulty(&sets, self.config.k, &parts, backend.as_ref())
        })?;

        let mut outputs = Vec::new();
        for level in augment::DifficultyLevel::ALL {
            let rel = generator_stage_file(level.stage());
            self.write_jsonl(&rel, sets.level(level))?;
            outputs.push(rel);
        }
        self.write_json(AUGMENT_REPORT, &report)?;
        self.write_json(DIFFICULTY_REPORT, &difficulty)?;
        outputs.extend([AUGMENT_REPORT.to_string(), DIFFICULTY_REPORT.to_string()]);
        self.finish(Step::Augment, inputs, Some(fp), BTreeMap::new(), &outputs)
    }

    fn load_level_sets(&self) -> Result<LevelSets> {
        Ok(LevelSets {
            easy: self.read_jsonl(&generator_stage_file(1))?,
            common: self.read_jsonl(&generator_stage_file(2))?,
            hard: self.read_jsonl(&generator_stage_file(3))?,
        })
    }

    fn emit_sft(&self) -> Result<StepOutcome> {
        let rels: Vec<String> = (1..=3).map(generator_stage_file).collect();
        let mut sources: Vec<(String, PathBuf)> = rels.iter().map(|r| (r.clone(), self.artifact(r))).collect();
        sources.extend(self.prompt_inputs());
        let inputs = self.digest_inputs(&sources)?;
        if self.up_to_date(Step::EmitSft, &inputs, None) {
            return Ok(self.skipped(Step::EmitSft));
        }
        let sets = self.load_level_sets()?;
        let parts = self.prompt_parts()?;
        let seeds = BTreeMap::from([
            ("global".to_string(), self.config.seed),
            ("augment".to_string(), self.config.seed_for("augment")),
        ]);
        augment::emit_sft(&sets, &parts, &self.artifact("sft"), seeds)?;
        let mut outputs: Vec<String> = (1..=3).map(sft_stage_file).collect();
        outputs.push(SFT_MANIFEST.into());
        self.finish(Step::EmitSft, inputs, None, BTreeMap::new(), &outputs)
    }

    fn prompt_fingerprint(&self, parts: &PromptParts) -> String {
        hex::encode(Sha256::digest(canonical_json(&(&parts.system_text, &parts.user_template))))
    }

    fn score(&self) -> Result<StepOutcome> {
        let mut sources = self.upstream(&[QUERIES, DOCS, RETRIEVAL]);
        sources.extend(self.prompt_inputs());
        let inputs = self.digest_inputs(&sources)?;
        let backend = self.backend()?;
        let fp = backend.fingerprint();
        if self.up_to_date(Step::Score, &inputs, Some(&fp)) {
            return Ok(self.skipped(Step::Score));
        }
        let parts = self.prompt_parts()?;
        let prompt_fp = self.prompt_fingerprint(&parts);

        // Rows from an earlier run with the same backend and prompt are reused.
        let mut cache: HashMap<(String, String), UtilityScore> = HashMap::new();
        if let Ok(text) = std::fs::read_to_string(self.manifest_path(Step::Score)) {
            if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
                let compatible =
                    m.backend.as_deref() == Some(fp.as_str()) && m.extra.get("prompt") == Some(&prompt_fp);
                if compatible && self.artifact(SCORES).is_file() && !self.force {
                    for row in self.read_jsonl::<ScoreRow>(SCORES)? {
                        cache.insert(
                            (row.query_id, row.doc_id),
                            UtilityScore {
                                answer_rank: row.answer_rank,
                                answer_logprob: row.answer_logprob,
                            },
                        );
                    }
                }
            }
        }

        let data = self.load_inputs()?;
        let retrievals = self.retrievals()?;
        let mut jobs: Vec<(&QueryRecord, Option<&DocumentRecord>)> = Vec::new();
        for q in &data.queries {
            let list = retrievals.get(&q.query_id).ok_or_else(|| PipelineError::Validation(format!(
                "{RETRIEVAL} has no list for query {}",
                q.query_id
            )))?;
            jobs.push((q, None));
            for id in list.doc_ids().take(self.config.n) {
                let doc = data.store.get(id).ok_or_else(|| {
                    PipelineError::Validation(format!("retrieved document {id} missing from {DOCS}"))
                })?;
                jobs.push((q, Some(doc)));
            }
        }
        let reused = jobs
            .iter()
            .filter(|(q, d)| cache.contains_key(&(q.query_id.clone(), d.map_or(String::new(), |d| d.doc_id.clone()))))
            .count();
        tracing::info!(total = jobs.len(), reused, "scoring");
        let be = backend.as_ref();
        let rows: Vec<ScoreRow> = self.with_backend_pool(be, || {
            jobs.par_iter()
                .map(|(q, doc)| {
                    let doc_id = doc.map_or(String::new(), |d| d.doc_id.clone());
                    let key = (q.query_id.clone(), doc_id.clone());
                    let s = match cache.get(&key) {
                        Some(s) => *s,
                        None => match doc {
                            None => score_without_context(&q.query_id, &q.question, &q.gold_answers[0], &parts, be)?,
                            Some(d) => score_with_context(
                                &q.query_id,
                                &q.question,
                                std::slice::from_ref(*d),
                                &q.gold_answers[0],
                                &parts,
                                be,
                            )?,
                        },
                    };
                    Ok(ScoreRow {
                        query_id: q.query_id.clone(),
                        doc_id,
                        answer_rank: s.answer_rank,
                        answer_logprob: s.answer_logprob,
                    })
                })
                .collect::<std::result::Result<_, GenError>>()
        })??;
        self.write_jsonl(SCORES, &rows)?;
        let extra = BTreeMap::from([("prompt".to_string(), prompt_fp)]);
        self.finish(Step::Score, inputs, Some(fp), extra, &[SCORES.into()])
    }

    fn rerank(&self) -> Result<StepOutcome> {
        let inputs = self.digest_inputs(&self.upstream(&[QUERIES, RETRIEVAL, SCORES]))?;
        if self.up_to_date(Step::Rerank, &inputs, None) {
            return Ok(self.skipped(Step::Rerank));
        }
        let queries: Vec<QueryRecord> = self.read_jsonl(QUERIES)?;
        let retrievals = self.retrievals()?;
        let mut baseline: HashMap<String, UtilityScore> = HashMap::new();
        let mut with_doc: HashMap<String, HashMap<String, UtilityScore>> = HashMap::new();
        for row in self.read_jsonl::<ScoreRow>(SCORES)? {
            let s = UtilityScore {
                answer_rank: row.answer_rank,
                answer_logprob: row.answer_logprob,
            };
            if row.doc_id.is_empty() {
                baseline.insert(row.query_id, s);
            } else {
                with_doc.entry(row.query_id).or_default().insert(row.doc_id, s);
            }
        }
        let empty = HashMap::new();
        let lists = queries
            .iter()
            .map(|q| {
                let list = retrievals.get(&q.query_id).ok_or_else(|| PipelineError::MissingArtifact {
                    path: format!("{RETRIEVAL} entry for {}", q.query_id),
                    producer: Step::Retrieve.name(),
                })?;
                let base = baseline.get(&q.query_id).ok_or_else(|| PipelineError::MissingArtifact {
                    path: format!("{SCORES} baseline for {}", q.query_id),
                    producer: Step::Score.name(),
                })?;
                let ids: Vec<String> = list.doc_ids().take(self.config.n).map(String::from).collect();
                Ok(rerank_documents(&q.query_id, &ids, base, with_doc.get(&q.query_id).unwrap_or(&empty))?)
            })
            .collect::<Result<Vec<RerankedList>>>()?;
        self.write_jsonl(RERANKED, &lists)?;
        self.finish(Step::Rerank, inputs, None, BTreeMap::new(), &[RERANKED.into()])
    }

    /// Builds every stage, or only `only` when given.
    pub fn build_stages(&self, only: Option<usize>) -> Result<StepOutcome> {
        let inputs = self.digest_inputs(&self.upstream(&[RERANKED]))?;
        let mut extra = BTreeMap::new();
        if let Some(s) = only {
            extra.insert("stage".to_string(), s.to_string());
        }
        if only.is_none() && self.up_to_date(Step::BuildStages, &inputs, None) {
            return Ok(self.skipped(Step::BuildStages));
        }
        let lists: Vec<RerankedList> = self.read_jsonl(RERANKED)?;
        let seed = self.config.seed_for("stages");
        let selected: Vec<&StageSchedule> = self
            .config
            .schedules
            .iter()
            .filter(|s| only.is_none_or(|o| o == s.stage))
            .collect();
        if selected.is_empty() {
            return Err(PipelineError::Config(format!("no schedule for stage {}", only.unwrap_or(0))));
        }
        let mut outputs = Vec::new();
        for schedule in selected {
            let ds = build_stage_dataset(&lists, schedule, self.config.n, seed, 0)?;
            let rel = stage_file(schedule.stage);
            self.write_jsonl(&rel, &ds.instances)?;
            outputs.push(rel);
        }
        let manifest = StagesManifest {
            seed,
            n: self.config.n,
            schedules: self.config.schedules.clone(),
            files: self.config.schedules.iter().map(|s| stage_file(s.stage)).collect(),
        };
        self.write_json(STAGES_MANIFEST, &manifest)?;
        outputs.push(STAGES_MANIFEST.into());
        self.finish(Step::BuildStages, inputs, None, extra, &outputs)
    }

    fn feature_table(&self, queries: &[QueryRecord], store: &DocStore, spec: &FeatureSpec) -> FeatureTable {
        FeatureTable {
            queries: queries.iter().map(|q| (q.query_id.clone(), featurize(&q.question, spec))).collect(),
            docs: store.iter().map(|d| (d.doc_id.clone(), featurize(&d.text, spec))).collect(),
        }
    }

    /// Trains stages `1..=upto` (all stages by default).
    pub fn train(&self, upto: Option<usize>) -> Result<StepOutcome> {
        let last = upto.unwrap_or(self.config.schedules.len());
        if last == 0 || last > self.config.schedules.len() {
            return Err(PipelineError::Config(format!(
                "stage {last} out of range 1..={}",
                self.config.schedules.len()
            )));
        }
        let stage_rels: Vec<String> = (1..=last).map(stage_file).collect();
        let mut sources: Vec<(String, PathBuf)> = stage_rels.iter().map(|r| (r.clone(), self.artifact(r))).collect();
        sources.extend(self.upstream(&[QUERIES, DOCS, ENCODER_INIT]));
        let inputs = self.digest_inputs(&sources)?;
        let extra = BTreeMap::from([("upto".to_string(), last.to_string())]);
        if upto.is_none() && self.up_to_date(Step::Train, &inputs, None) {
            return Ok(self.skipped(Step::Train));
        }
        let data = self.load_inputs()?;
        let init = EncoderParams::from_file(self.read_json(ENCODER_INIT)?)?;
        let spec = init.feature_spec();
        let features = self.feature_table(&data.queries, &data.store, &spec);
        let stages = self.config.schedules[..last]
            .iter()
            .map(|schedule| {
                let instances: Vec<RetrieverTrainingInstance> = self.read_jsonl(&stage_file(schedule.stage))?;
                for inst in &instances {
                    inst.validate(schedule, self.config.n)?;
                }
                Ok(StageDataset {
                    schedule: *schedule,
                    seed: self.config.seed_for("stages"),
                    epoch: 0,
                    instances,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut config = self.config.effective_train();
        config.epochs = last * config.passes_per_stage;
        let outcome = train_curriculum(&stages, &features, &init, self.config.n, &config)?;

        let mut outputs = Vec::new();
        for (ds, params) in stages.iter().zip(&outcome.checkpoints) {
            let rel = checkpoint_file(ds.schedule.stage);
            self.write_json(
                &rel,
                &Checkpoint {
                    stage: ds.schedule.stage,
                    seed: config.seed,
                    config,
                    encoder: params.to_file(),
                },
            )?;
            outputs.push(rel);
        }
        let report = TrainingReport {
            stage_order: stages.iter().map(|s| s.schedule.stage).collect(),
            seed: config.seed,
            config,
            stages: outcome.reports,
        };
        self.write_json(TRAINING_REPORT, &report)?;
        outputs.push(TRAINING_REPORT.into());
        self.finish(Step::Train, inputs, None, extra, &outputs)
    }

    fn eval_ks(&self) -> Vec<usize> {
        let mut ks = vec![1, self.config.k, self.config.n];
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    fn evaluate_encoder(
        &self,
        params: &EncoderParams,
        queries: &[QueryRecord],
        store: &DocStore,
        backend: &dyn GeneratorBackend,
        parts: &PromptParts,
    ) -> Result<EvalReport> {
        let spec = params.feature_spec();
        let docs: Vec<(String, EmbeddingVector)> = store
            .as_slice()
            .par_iter()
            .map(|d| Ok((d.doc_id.clone(), encode(&featurize(&d.text, &spec), params)?)))
            .collect::<std::result::Result<_, RetrievalError>>()?;
        let ks = self.eval_ks();
        let depth = *ks.last().expect("non-empty");
        let rows = self.with_backend_pool(backend, || {
            queries
                .par_iter()
                .map(|q| {
                    let qv = encode(&featurize(&q.question, &spec), params)?;
                    let list = top_n(&q.query_id, &qv, &docs, depth)?;
                    let retrieved: Vec<DocumentRecord> =
                        list.doc_ids().map(|id| store.get(id).expect("retrieved from store").clone()).collect();
                    let answer = generate_answer(
                        &q.query_id,
                        &q.question,
                        &retrieved[..self.config.k],
                        &q.gold_answers,
                        parts,
                        backend,
                    )?;
                    Ok(QueryEvalRow::score(&q.query_id, Some(&answer), &retrieved, &q.gold_answers, &ks))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        Ok(aggregate(rows))
    }

    fn final_checkpoint_rel(&self) -> String {
        checkpoint_file(self.config.schedules.last().map_or(1, |s| s.stage))
    }

    fn evaluate(&self) -> Result<StepOutcome> {
        let ckpt = self.final_checkpoint_rel();
        let mut sources = self.upstream(&[TEST_QUERIES, DOCS, ENCODER_INIT, ckpt.as_str()]);
        sources.extend(self.prompt_inputs());
        let inputs = self.digest_inputs(&sources)?;
        let backend = self.backend()?;
        let fp = backend.fingerprint();
        if self.up_to_date(Step::Evaluate, &inputs, Some(&fp)) {
            return Ok(self.skipped(Step::Evaluate));
        }
        let data = self.load_inputs()?;
        let parts = self.prompt_parts()?;
        let trained: Checkpoint = self.read_json(&ckpt)?;
        let trained = EncoderParams::from_file(trained.encoder)?;
        let init = EncoderParams::from_file(self.read_json(ENCODER_INIT)?)?;
        let report = self.evaluate_encoder(&trained, &data.test_queries, &data.store, backend.as_ref(), &parts)?;
        let initial = self.evaluate_encoder(&init, &data.test_queries, &data.store, backend.as_ref(), &parts)?;
        self.write_json(EVAL_REPORT, &report)?;
        self.write_json(EVAL_REPORT_INITIAL, &initial)?;
        self.finish(
            Step::Evaluate,
            inputs,
            Some(fp),
            BTreeMap::new(),
            &[EVAL_REPORT.into(), EVAL_REPORT_INITIAL.into()],
        )
    }

    fn robustness(&self) -> Result<StepOutcome> {
        let mut sources = self.upstream(&[TEST_QUERIES, DOCS, RETRIEVAL]);
        sources.extend(self.prompt_inputs());
        let inputs = self.digest_inputs(&sources)?;
        let backend = self.backend()?;
        let fp = backend.fingerprint();
        if self.up_to_date(Step::Robustness, &inputs, Some(&fp)) {
            return Ok(self.skipped(Step::Robustness));
        }
        let data = self.load_inputs()?;
        let all = self.retrievals()?;
        // Cross pool restricted to the evaluation queries' own retrievals.
        let retrievals: HashMap<String, RetrievalList> = data
            .test_queries
            .iter()
            .map(|q| {
                all.get(&q.query_id).cloned().map(|l| (q.query_id.clone(), l)).ok_or_else(|| {
                    PipelineError::Validation(format!("{RETRIEVAL} has no list for query {}", q.query_id))
                })
            })
            .collect::<Result<_>>()?;
        let templates = self.templates()?;
        let parts = self.prompt_parts()?;
        let be = backend.as_ref();
        let aug = self.augmenter(&data.store, be, &templates, self.config.seed_for("robustness"));
        let clean = data
            .test_queries
            .iter()
            .map(|q| aug.build_common(q, &retrievals[&q.query_id]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (clean_eval, clean_failures) = self.with_backend_pool(be, || assess_level(&clean, self.config.k, &parts, be))?;
        self.write_jsonl(ROBUSTNESS_CLEAN, &clean)?;
        let mut outputs = vec![ROBUSTNESS_CLEAN.to_string()];
        let mut reports = vec![RobustnessSetReport {
            mode: None,
            examples: clean.len(),
            skipped: Vec::new(),
            em: clean_eval.em,
            f1: clean_eval.f1,
            generation_failures: clean_failures,
        }];
        for mode in [Perturbation::Irrelevant, Perturbation::Counterfactual] {
            let (set, skipped) =
                self.with_backend_pool(be, || aug.build_robustness_testset(&data.test_queries, &retrievals, mode))??;
            let (eval, failures) = self.with_backend_pool(be, || assess_level(&set, self.config.k, &parts, be))?;
            let rel = robustness_file(mode);
            self.write_jsonl(&rel, &set)?;
            outputs.push(rel);
            reports.push(RobustnessSetReport {
                mode: Some(mode),
                examples: set.len(),
                skipped,
                em: eval.em,
                f1: eval.f1,
                generation_failures: failures,
            });
        }
        self.write_json(ROBUSTNESS_REPORT, &reports)?;
        outputs.push(ROBUSTNESS_REPORT.into());
        self.finish(Step::Robustness, inputs, Some(fp), BTreeMap::new(), &outputs)
    }

    fn report(&self) -> Result<StepOutcome> {
        let stage_rels: Vec<String> = self.config.schedules.iter().map(|s| stage_file(s.stage)).collect();
        let mut rels: Vec<&str> = vec![DIFFICULTY_REPORT, AUGMENT_REPORT, TRAINING_REPORT, EVAL_REPORT, EVAL_REPORT_INITIAL];
        rels.extend(stage_rels.iter().map(String::as_str));
        let mut sources = self.upstream(&rels);
        let with_robustness = self.artifact(ROBUSTNESS_REPORT).is_file();
        if with_robustness {
            sources.extend(self.upstream(&[ROBUSTNESS_REPORT]));
        }
        let inputs = self.digest_inputs(&sources)?;
        if self.up_to_date(Step::Report, &inputs, None) {
            return Ok(self.skipped(Step::Report));
        }
        let rank_gaps = self
            .config
            .schedules
            .iter()
            .map(|s| {
                let instances: Vec<RetrieverTrainingInstance> = self.read_jsonl(&stage_file(s.stage))?;
                Ok(StageGapRow {
                    stage: s.stage,
                    stats: rank_gap_stats(&instances)?,
                })
            })
            .collect::<Result<_>>()?;
        let trained: EvalReport = self.read_json(EVAL_REPORT)?;
        let initial: EvalReport = self.read_json(EVAL_REPORT_INITIAL)?;
        let report = ConsolidatedReport {
            config_hash: self.config.hash(),
            difficulty: self.read_json(DIFFICULTY_REPORT)?,
            augment: self.read_json(AUGMENT_REPORT)?,
            rank_gaps,
            training: self.read_json(TRAINING_REPORT)?,
            eval_trained: (&trained).into(),
            eval_initial: (&initial).into(),
            robustness: if with_robustness { self.read_json(ROBUSTNESS_REPORT)? } else { Vec::new() },
        };
        self.write_json(REPORT, &report)?;
        self.finish(Step::Report, inputs, None, BTreeMap::new(), &[REPORT.into()])
    }

    /// Config checks, template slots, and construction invariants of any
    /// generator or robustness sets already on disk. `probe_backend` sends
    /// one scoring request to check the backend is reachable.
    pub fn validate(config: &PipelineConfig, base: &Path, probe_backend: bool) -> ValidationReport {
        let mut report = ValidationReport {
            failures: config.check(),
            checked_files: Vec::new(),
        };
        if let Some(dir) = &config.paths.prompts {
            let dir = resolve(base, dir);
            if let Err(e) = PromptParts::load(&dir.join("inference.txt")) {
                report.failures.push(format!("prompts/inference.txt: {e}"));
            }
            if let Err(e) = RewriteTemplates::load_dir(&dir) {
                report.failures.push(format!("prompts: {e}"));
            }
        }
        match config.backend.build() {
            Err(e) => report.failures.push(format!("backend: {e}")),
            Ok(backend) if probe_backend => {
                let probe = score_without_context("probe", "What is one plus one?", "two", &PromptParts::default(), backend.as_ref());
                if let Err(e) = probe {
                    report.failures.push(format!("backend: unreachable: {e}"));
                }
            }
            Ok(_) => {}
        }
        if !report.failures.is_empty() {
            return report;
        }
        let out = resolve(base, &config.paths.out);
        let mut read = |rel: &str| -> Option<Vec<GeneratorExample>> {
            let p = out.join(rel);
            if !p.is_file() {
                return None;
            }
            match jsonl::read(&p) {
                Ok(rows) => {
                    report.checked_files.push(rel.to_string());
                    Some(rows.into_iter().map(|(_, v)| v).collect())
                }
                Err(e) => {
                    report.failures.push(e.to_string());
                    None
                }
            }
        };
        let levels = (read(&generator_stage_file(1)), read(&generator_stage_file(2)), read(&generator_stage_file(3)));
        let clean = read(ROBUSTNESS_CLEAN);
        let perturbed: Vec<(String, Vec<GeneratorExample>)> = [Perturbation::Irrelevant, Perturbation::Counterfactual]
            .into_iter()
            .filter_map(|m| read(&robustness_file(m)).map(|v| (robustness_file(m), v)))
            .collect();
        let mut violations = Vec::new();
        if let (Some(easy), Some(common), Some(hard)) = levels {
            violations.extend(augment::validate_sets(&LevelSets { easy, common, hard }, &[], config.k));
        }
        if let Some(common) = clean {
            let named: Vec<(&str, &[GeneratorExample])> =
                perturbed.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
            let sets = LevelSets {
                common,
                ..LevelSets::default()
            };
            violations.extend(
                augment::validate_sets(&sets, &named, config.k)
                    .into_iter()
                    .map(|mut v| {
                        if v.set == "common" {
                            v.set = ROBUSTNESS_CLEAN.to_string();
                        }
                        v
                    }),
            );
        }
        for v in violations {
            report.failures.push(format!("{} {}: {}", v.set, v.query_id, v.message));
        }
        report
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Validation(e.to_string()))?;
    body.push(b'\n');
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

/// Writes a synthetic corpus as queries.jsonl, test_queries.jsonl (when
/// non-empty) and docs.jsonl under `dir`.
pub fn write_synthetic(dir: &Path, corpus: &crate::synth::SynthCorpus) -> Result<()> {
    jsonl::write(&dir.join("queries.jsonl"), &corpus.queries)?;
    if !corpus.test_queries.is_empty() {
        jsonl::write(&dir.join("test_queries.jsonl"), &corpus.test_queries)?;
    }
    jsonl::write(&dir.join("docs.jsonl"), &corpus.docs)?;
    Ok(())
}
