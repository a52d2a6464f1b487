use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ragcurriculum::genclient::BackendConfig;
use ragcurriculum::pipeline::{EncoderSettings, Paths, Pipeline, PipelineConfig, PipelineError, Step};
use ragcurriculum::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "ragcurriculum", version, about = "Difficulty-graded RAG curricula and tiered-loss retriever training")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (JSON). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, also the cap on concurrent backend requests.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Stage for build-stages (only that stage) and train (stages 1..=s).
    #[arg(long, global = true, default_value = "all")]
    stage: StageArg,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute even when the manifest says the step is up to date.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Stub,
    Http,
}

#[derive(Clone, Copy)]
enum StageArg {
    All,
    One(usize),
}

impl std::str::FromStr for StageArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            "1" | "2" | "3" => Ok(Self::One(s.parse().expect("digit"))),
            _ => Err(format!("expected 1, 2, 3 or all, got {s}")),
        }
    }
}

impl StageArg {
    fn get(self) -> Option<usize> {
        match self {
            Self::All => None,
            Self::One(s) => Some(s),
        }
    }
}

#[derive(Subcommand)]
enum Command {
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
    /// Every step in order.
    All,
    /// Check the configuration, prompt templates and any emitted example sets.
    Validate {
        /// Also send one request to the backend.
        #[arg(long)]
        probe_backend: bool,
    },
    /// Write a synthetic corpus and a matching config.json into a directory.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        test_queries: usize,
    },
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf), PipelineError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = std::path::absolute(out).map_err(|e| PipelineError::Config(format!("--out: {e}")))?;
    }
    match (cli.backend, &cfg.backend) {
        (Some(BackendKind::Stub), _) => cfg.backend = BackendConfig::LexicalStub,
        (Some(BackendKind::Http), BackendConfig::LexicalStub) => {
            return Err(PipelineError::Config(
                "backend: --backend http needs a backend section with kind \"http_logprob_api\" in the config".into(),
            ))
        }
        _ => {}
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn write_synth(cli: &Cli, dir: &Path, queries: usize, test_queries: usize) -> Result<(), PipelineError> {
    let corpus = synth::generate(&SynthConfig {
        queries,
        test_queries,
        seed: cli.seed.unwrap_or(0),
        ..Default::default()
    });
    ragcurriculum::pipeline::write_synthetic(dir, &corpus)?;
    let mut cfg = PipelineConfig::new(Paths {
        queries: "queries.jsonl".into(),
        docs: "docs.jsonl".into(),
        test_queries: (test_queries > 0).then(|| "test_queries.jsonl".into()),
        embeddings: None,
        retrieval: None,
        prompts: None,
        out: "out".into(),
    });
    cfg.seed = cli.seed.unwrap_or(0);
    cfg.encoder = EncoderSettings { buckets: 1024, dim: 256 };
    cfg.train.learning_rate = 2.0;
    cfg.train.batch_size = 16;
    cfg.train.passes_per_stage = 5;
    cfg.train.epochs = 15;
    let body = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    let path = dir.join("config.json");
    std::fs::write(&path, body).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    println!("wrote {} queries and {} documents to {}", corpus.queries.len() + corpus.test_queries.len(), corpus.docs.len(), dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Synth { dir, queries, test_queries } = &cli.command {
        return write_synth(cli, dir, *queries, *test_queries);
    }
    let (cfg, base) = load_config(cli)?;
    if let Command::Validate { probe_backend } = cli.command {
        let report = Pipeline::validate(&cfg, &base, probe_backend);
        for f in &report.checked_files {
            println!("checked {f}");
        }
        for f in &report.failures {
            println!("FAIL {f}");
        }
        if report.ok() {
            println!("ok");
            return Ok(());
        }
        return Err(PipelineError::Validation(format!("{} check(s) failed", report.failures.len())));
    }
    let mut pipeline = Pipeline::new(cfg, base)?;
    pipeline.force = cli.force;
    if let Some(j) = cli.jobs {
        pipeline.jobs = j.max(1);
    }
    let stage = cli.stage.get();
    let outcomes = match cli.command {
        Command::Ingest => vec![pipeline.run(Step::Ingest)?],
        Command::Retrieve => vec![pipeline.run(Step::Retrieve)?],
        Command::Augment => vec![pipeline.run(Step::Augment)?],
        Command::EmitSft => vec![pipeline.run(Step::EmitSft)?],
        Command::Score => vec![pipeline.run(Step::Score)?],
        Command::Rerank => vec![pipeline.run(Step::Rerank)?],
        Command::BuildStages => vec![pipeline.build_stages(stage)?],
        Command::Train => vec![pipeline.train(stage)?],
        Command::Evaluate => vec![pipeline.run(Step::Evaluate)?],
        Command::Robustness => vec![pipeline.run(Step::Robustness)?],
        Command::Report => vec![pipeline.run(Step::Report)?],
        Command::All => pipeline.run_all()?,
        Command::Validate { .. } | Command::Synth { .. } => unreachable!(),
    };
    for o in outcomes {
        if o.skipped {
            println!("{}: up to date", o.step.name());
        } else {
            println!("{}: wrote {}", o.step.name(), o.outputs.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
