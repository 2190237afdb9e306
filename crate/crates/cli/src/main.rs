//! `autosafe`: run the hardening pipeline, fuzz one file, or summarize traces.
//!
//! Exit codes:
//! * `run` / `replay`: 0 when no task ended in a pipeline error, 1 otherwise.
//! * `fuzz-one`: 0 clean, 3 crashes found, 4 setup error.
//! * `report`: 0.
//! * Every subcommand: 2 for bad flags or configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use autosafe_core::fuzzing_agent::{DEFAULT_BUDGET, DEFAULT_MAX_FUZZ_ROUNDS};
use autosafe_core::llm::{LiveBackend, LiveConfig, ModelSettings, ReplayBackend, TemplateSet};
use autosafe_core::metrics::{compare, ingest_scanner_labels, vulnerable_fraction, SummaryReport};
use autosafe_core::mutation::{infer_types, TypeSignature};
use autosafe_core::orchestrator::load_traces;
use autosafe_core::sandbox::{extract_function, SandboxConfig, SliceError};
use autosafe_core::static_agent::DEFAULT_MAX_STATIC_ROUNDS;
use autosafe_core::{
    load_corpus, summarize, CorpusFormat, FuzzConfig, FuzzRng, FuzzingAgent, InputTuple, LlmClient, Pipeline,
    PipelineConfig, Sandbox,
};

const EXIT_PIPELINE_ERRORS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CRASHES: u8 = 3;
const EXIT_SETUP: u8 = 4;

#[derive(Parser)]
#[command(name = "autosafe", version, about = "Generate, review, and fuzz LLM-written Python functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over a task corpus.
    Run(RunArgs),
    /// Re-run a recorded session offline; same as `run --backend replay`.
    Replay(RunArgs),
    /// Fuzz one local source file without any model calls.
    FuzzOne(FuzzOneArgs),
    /// Summarize a directory of task traces.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Replay,
}

#[derive(Args)]
struct RunArgs {
    /// Task corpus file.
    #[arg(long)]
    tasks: PathBuf,
    /// Corpus format: native, security-eval-like, human-eval-like.
    #[arg(long, default_value = "native")]
    format: CorpusFormat,
    #[arg(long, default_value = "autosafe-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendKind,
    /// Recorded exchanges for the replay backend.
    #[arg(long)]
    replay_file: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1")]
    api_base: String,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STATIC_ROUNDS)]
    max_static_rounds: u32,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    fuzz_budget: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_FUZZ_ROUNDS)]
    max_fuzz_rounds: u32,
    /// Per-execution limit.
    #[arg(long, default_value_t = 6.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Interpreter command, split on whitespace.
    #[arg(long, default_value = "python3")]
    interpreter: String,
    /// Keep traces already in the output directory.
    #[arg(long)]
    resume: bool,
    /// Pipeline samples per task for pass@k.
    #[arg(long, default_value_t = 1)]
    n_samples: usize,
    /// Scanner verdicts for the final code, added to the summary.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Stop after the static review loop.
    #[arg(long)]
    no_fuzz: bool,
}

#[derive(Args)]
struct FuzzOneArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    entry: String,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// Per-execution limit in seconds.
    #[arg(long, default_value_t = 6.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter types, e.g. `int, list[str]`.
    #[arg(long)]
    types: Option<String>,
    /// Seed argument lists as a JSON array of arrays.
    #[arg(long)]
    seeds_json: Option<String>,
    #[arg(long, default_value = "python3")]
    interpreter: String,
}

#[derive(Args)]
struct ReportArgs {
    /// A run's output directory or its `traces` subdirectory.
    #[arg(long)]
    traces_dir: PathBuf,
    /// Scanner verdicts for the pipeline's final code.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Scanner verdicts for a baseline, reported against `--labels`.
    #[arg(long, requires = "labels")]
    baseline_labels: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(mut args) => {
            args.backend = BackendKind::Replay;
            cmd_run(args)
        }
        Command::FuzzOne(args) => cmd_fuzz_one(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn interpreter(cmd: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
    if parts.is_empty() {
        bail!("--interpreter is empty");
    }
    Ok(parts)
}

fn timeout(secs: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| anyhow!("timeout must be a positive number of seconds, got {secs}"))
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    if args.parallelism == 0 || args.n_samples == 0 {
        bail!("--parallelism and --n-samples must be at least 1");
    }
    let corpus = load_corpus(&args.tasks, args.format).with_context(|| format!("loading {}", args.tasks.display()))?;
    let settings = ModelSettings {
        model: args.model.clone(),
        temperature: args.temperature,
        ..ModelSettings::default()
    };
    let llm = match args.backend {
        BackendKind::Replay => {
            let path = args.replay_file.as_ref().context("--backend replay needs --replay-file")?;
            LlmClient::new(ReplayBackend::from_file(path)?, settings)
        }
        BackendKind::Live => {
            if args.replay_file.is_some() {
                bail!("--replay-file only applies to --backend replay");
            }
            LlmClient::new(LiveBackend::new(LiveConfig::from_env(&args.api_base)?), settings)
        }
    };
    let templates = match &args.templates {
        Some(dir) => TemplateSet::load_dir(dir).with_context(|| format!("loading templates from {}", dir.display()))?,
        None => TemplateSet::builtin(),
    };
    let config = PipelineConfig {
        max_static_rounds: args.max_static_rounds,
        fuzz: FuzzConfig {
            budget: args.fuzz_budget,
            max_fuzz_rounds: args.max_fuzz_rounds,
            ..FuzzConfig::default()
        },
        exec_timeout: timeout(args.timeout_secs)?,
        rng_seed: args.seed,
        parallelism: args.parallelism,
        interpreter_cmd: interpreter(&args.interpreter)?,
        output_dir: args.out.clone(),
        resume: args.resume,
        n_samples: args.n_samples,
        fuzz_enabled: !args.no_fuzz,
    };
    log::info!("{} tasks from {}", corpus.tasks.len(), args.tasks.display());
    let pipeline = Pipeline::new(config, Arc::new(llm), Arc::new(templates));
    let report = pipeline.run_pipeline(&corpus)?;
    if !report.resumed.is_empty() {
        log::info!("resumed {} finished task(s)", report.resumed.len());
    }

    if let Some(path) = &args.labels {
        let mut summary = report.summary.clone();
        let known: BTreeSet<String> = corpus.tasks.iter().map(|t| t.id.clone()).collect();
        summary.vulnerabilities = Some(vulnerable_fraction(&ingest_scanner_labels(path)?, Some(&known)));
        write_summary(&args.out.join("summary.json"), &summary)?;
    }

    let errors = &report.summary.pipeline_errors;
    for (status, count) in &report.summary.final_status {
        eprintln!("{status:>18}: {count}");
    }
    eprintln!("outputs written to {}", args.out.display());
    if errors.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} task(s) hit pipeline errors: {}", errors.len(), errors.join(", "));
        Ok(EXIT_PIPELINE_ERRORS)
    }
}

fn write_summary(path: &Path, summary: &SummaryReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_seeds(text: &str) -> Result<Vec<InputTuple>> {
    let value: Value = serde_json::from_str(text).context("--seeds-json is not valid JSON")?;
    let Value::Array(rows) = value else {
        bail!("--seeds-json must be an array of argument arrays");
    };
    rows.iter()
        .enumerate()
        .map(|(i, row)| InputTuple::from_args_json(i, row).map_err(|e| anyhow!("seed {i}: {e}")))
        .collect()
}

/// Seeds from `--seeds-json`, coerced to `--types` when both are given, or
/// the default tuple for `--types` alone.
fn fuzz_one_seeds(args: &FuzzOneArgs) -> Result<Vec<InputTuple>> {
    let hint: Option<TypeSignature> = args
        .types
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(|e| anyhow!("--types: {e}"))?;
    match (&args.seeds_json, hint) {
        (Some(text), hint) => {
            let seeds = parse_seeds(text)?;
            match hint {
                Some(sig) => seeds
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| sig.coerce(s).ok_or_else(|| anyhow!("seed {i} does not fit --types")))
                    .collect(),
                None => {
                    if !seeds.is_empty() {
                        infer_types(&seeds).map_err(|e| anyhow!("--seeds-json: {e}"))?;
                    }
                    Ok(seeds)
                }
            }
        }
        (None, Some(sig)) => Ok(vec![sig.default_tuple(0)]),
        (None, None) => bail!("fuzz-one needs --types or --seeds-json"),
    }
}

fn cmd_fuzz_one(args: FuzzOneArgs) -> Result<u8> {
    let source = std::fs::read_to_string(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    match extract_function(&source, &args.entry) {
        Ok(_) => {}
        Err(SliceError::EntryPointNotFound(name)) => bail!("no function `{name}` in {}", args.file.display()),
        Err(e) => bail!("{}: {e}", args.file.display()),
    }
    let seeds = fuzz_one_seeds(&args)?;
    let sandbox = Sandbox::new(
        SandboxConfig::default()
            .with_interpreter(interpreter(&args.interpreter)?)
            .with_timeout(timeout(args.timeout)?),
    );
    let agent = FuzzingAgent::new(
        sandbox,
        FuzzConfig {
            budget: args.budget,
            ..FuzzConfig::default()
        },
    );
    let mut rng = FuzzRng::seed_from_u64(args.seed);
    let outcome = agent.fuzz_source(&source, &args.entry, &seeds, args.budget, &mut rng)?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(if outcome.setup_error {
        EXIT_SETUP
    } else if outcome.clean {
        0
    } else {
        EXIT_CRASHES
    })
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    if !args.traces_dir.is_dir() {
        bail!("{} is not a directory", args.traces_dir.display());
    }
    let nested = args.traces_dir.join("traces");
    let dir = if nested.is_dir() { nested } else { args.traces_dir.clone() };
    let traces = load_traces(&dir).with_context(|| format!("reading traces from {}", dir.display()))?;
    let mut summary = summarize(&traces);
    let known: BTreeSet<String> = traces.iter().map(|t| t.task_id.clone()).collect();
    // Labels may cover tasks whose traces are elsewhere; only filter when
    // there is something to filter against.
    let scope = (!known.is_empty()).then_some(&known);
    if let Some(path) = &args.labels {
        let pipeline = vulnerable_fraction(&ingest_scanner_labels(path)?, scope);
        if let Some(base) = &args.baseline_labels {
            let baseline = vulnerable_fraction(&ingest_scanner_labels(base)?, scope);
            summary.comparison = Some(compare(baseline, pipeline.clone()));
        }
        summary.vulnerabilities = Some(pipeline);
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}
