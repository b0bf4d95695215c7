//! The `clinrisk` command line. Progress and warnings go to standard error,
//! results to standard output or the files named by flags. Failures print
//! one JSON line `{"error", "flag", "message"}` to standard error.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::error::{ContextKind, ContextValue};
use clap::{Args, Parser, Subcommand};
use clinrisk_core::ehr::io::{read_cohort, write_cohort, SAMPLES_FILE, VOCABULARY_FILE};
use clinrisk_core::ehr::{clean, generate_synthetic, ingest, window, EventVocabulary, SyntheticCohortSpec, TrainingSample, DEFAULT_WINDOW_DAYS};
use clinrisk_core::retain::ModelConfig;
use clinrisk_core::train::{
    comparison_table, evaluate, evaluate_stacked, split_by_patient, train, EvalOptions, EvalReport, Schedule, MULTI_COLUMN, SINGLE_COLUMN,
};
use clinrisk_core::{Error as CoreError, Model};
use clinrisk_service::{Engine, ServiceConfig};
use serde_json::json;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "clinrisk",
    version,
    about = "Multi-target clinical risk prediction with attribution, retrieval and what-if analysis",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[command(subcommand_required = true)]
pub enum Command {
    /// Write a synthetic cohort with planted rules.
    Generate(GenerateArgs),
    /// Turn a flat event table into a windowed cohort.
    Ingest(IngestArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and write the metric table.
    Eval(EvalArgs),
    /// Rank cohort patients by sequence distance to one patient.
    Similar(SimilarArgs),
    /// Run the HTTP decision service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GenerateArgs {
    /// JSON cohort spec: n_patients, vocab_sizes, rules, rng_seed.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output cohort directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides rng_seed from the cohort file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct IngestArgs {
    /// CSV or TSV with header patient_id,code,kind,timestamp.
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_count: u64,
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS, value_parser = positive_f64)]
    pub window_days: f64,
    /// Comma-separated codes that mark an admission.
    #[arg(long, value_delimiter = ',', required = true)]
    pub admission_codes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Comma-separated target codes.
    #[arg(long, value_delimiter = ',', required_unless_present = "single_target", conflicts_with = "single_target")]
    pub targets: Vec<String>,
    /// Baseline mode: train on this one target only.
    #[arg(long)]
    pub single_target: Option<String>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 5e-3, value_parser = positive_f64)]
    pub lr: f64,
    /// Drives initialization, the split and the shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of patients used for training.
    #[arg(long, default_value_t = 0.7, value_parser = open_unit_f64)]
    pub split: f64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed_dim: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden_dim: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Single-target checkpoints stacked into a baseline column.
    #[arg(long, value_delimiter = ',')]
    pub single_target_checkpoints: Vec<PathBuf>,
    /// Metric table path (CSV).
    #[arg(long)]
    pub report: PathBuf,
    /// Evaluate every sample instead of the held-out split.
    #[arg(long)]
    pub all: bool,
    /// Seed and ratio that reproduce the training split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7, value_parser = open_unit_f64)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SimilarArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub patient: String,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Sakoe-Chiba band half-width.
    #[arg(long)]
    pub band: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct ServeArgs {
    /// TOML service config.
    #[arg(long)]
    pub config: PathBuf,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be positive and finite".into())
    }
}

fn open_unit_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("must lie strictly between 0 and 1".into())
    }
}

#[derive(Debug)]
pub enum CliError {
    /// A flag value that parsed but cannot be used.
    Flag { flag: &'static str, message: String },
    Usage { flag: Option<String>, message: String },
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Flag { .. } | CliError::Usage { .. } => EXIT_USAGE,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }

    /// The single JSON line printed on failure.
    pub fn line(&self) -> String {
        let value = match self {
            CliError::Flag { flag, message } => json!({ "error": "invalid_flag", "flag": flag, "message": message }),
            CliError::Usage { flag, message } => json!({ "error": "usage", "flag": flag, "message": message }),
            CliError::Runtime { kind, message } => json!({ "error": kind, "flag": null, "message": message }),
        };
        value.to_string()
    }

    /// Collapses clap's multi-line report into one line, dropping the usage block.
    pub fn from_clap(err: &clap::Error) -> Self {
        if err.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
            return CliError::Usage { flag: None, message: "a subcommand is required; try --help".into() };
        }
        let rendered = err.render().to_string();
        let head = rendered.split("\n\nUsage:").next().unwrap_or_default();
        let head = head.split("For more information").next().unwrap_or_default();
        let message = head.split_whitespace().collect::<Vec<_>>().join(" ");
        let flag = match err.get(ContextKind::InvalidArg) {
            Some(ContextValue::String(s)) => Some(s.clone()),
            Some(ContextValue::Strings(v)) => v.first().cloned(),
            _ => None,
        };
        let flag = flag.and_then(|f| f.split_whitespace().next().map(str::to_string)).filter(|f| f.starts_with("--"));
        CliError::Usage { flag, message: message.trim_start_matches("error: ").to_string() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::Io(_) => "io",
            CoreError::Parse(_) => "parse",
            CoreError::Diverged { .. } => "diverged",
            CoreError::VocabularyMismatch { .. } => "vocabulary_mismatch",
            CoreError::SchemaVersion { .. } => "schema_version",
            CoreError::UnknownCode(_) => "unknown_code",
            CoreError::InvalidSpec(_) => "invalid_spec",
            CoreError::NoValidRows { .. } | CoreError::EverythingCleaned { .. } => "empty_cohort",
            _ => "invalid_input",
        };
        CliError::Runtime { kind, message: e.to_string() }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime { kind: "io", message: format!("{}: {e}", path.display()) }
}

type CliResult = Result<(), CliError>;

fn require_file(path: &Path, flag: &'static str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Flag { flag, message: format!("{} is not a readable file", path.display()) })
    }
}

fn require_cohort(path: &Path, flag: &'static str) -> CliResult {
    for file in [SAMPLES_FILE, VOCABULARY_FILE] {
        if !path.join(file).is_file() {
            return Err(CliError::Flag { flag, message: format!("{} has no {file}", path.display()) });
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest_events(a),
        Command::Train(a) => train_model(a),
        Command::Eval(a) => eval(a),
        Command::Similar(a) => similar(a),
        Command::Serve(a) => serve(a),
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn generate(args: GenerateArgs) -> CliResult {
    require_file(&args.spec, "--spec")?;
    let text = fs::read_to_string(&args.spec).map_err(|e| io_error(&args.spec, e))?;
    let mut spec: SyntheticCohortSpec = serde_json::from_str(&text).map_err(|e| CliError::Flag { flag: "--spec", message: e.to_string() })?;
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    let (vocabulary, samples) = generate_synthetic(&spec)?;
    write_cohort(&args.out, &vocabulary, &samples)?;
    log::info!("wrote {} samples to {}", samples.len(), args.out.display());
    summary(json!({ "samples": samples.len(), "vocabulary": vocabulary.len(), "out": args.out }));
    Ok(())
}

fn ingest_events(args: IngestArgs) -> CliResult {
    let admission: BTreeSet<String> = args.admission_codes.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    if admission.is_empty() {
        return Err(CliError::Flag { flag: "--admission-codes", message: "no codes given".into() });
    }
    require_file(&args.events, "--events")?;
    let file = File::open(&args.events).map_err(|e| io_error(&args.events, e))?;
    let ingested = ingest(file)?;
    for row in ingested.rejected.iter().take(10) {
        log::warn!("line {}: {}", row.line, row.message);
    }
    if ingested.rejected.len() > 10 {
        log::warn!("{} more rejected rows", ingested.rejected.len() - 10);
    }
    let (vocabulary, sequences) = clean(&ingested.sequences, &ingested.vocabulary, args.min_count as usize)?;
    if let Some(missing) = admission.iter().find(|c| !vocabulary.contains(c)) {
        log::warn!("admission code {missing:?} is not in the cleaned vocabulary");
    }
    let samples = window(&vocabulary, &sequences, args.window_days, &admission)?;
    write_cohort(&args.out, &vocabulary, &samples)?;
    summary(json!({
        "samples": samples.len(),
        "patients": sequences.len(),
        "vocabulary": vocabulary.len(),
        "rejected_rows": ingested.rejected.len(),
        "out": args.out,
    }));
    Ok(())
}

fn check_codes(vocabulary: &EventVocabulary, codes: &[String], flag: &'static str) -> CliResult {
    if codes.is_empty() {
        return Err(CliError::Flag { flag, message: "no codes given".into() });
    }
    match codes.iter().find(|c| !vocabulary.contains(c)) {
        Some(c) => Err(CliError::Flag { flag, message: format!("code {c:?} is not in the cohort vocabulary") }),
        None => Ok(()),
    }
}

fn print_report(label: &str, report: &EvalReport) {
    for (metric, cell) in report.rows() {
        log::info!("{label} {metric}: {cell}");
    }
}

fn train_model(args: TrainArgs) -> CliResult {
    require_cohort(&args.cohort, "--cohort")?;
    let (vocabulary, samples) = read_cohort(&args.cohort)?;
    let (targets, flag) = match &args.single_target {
        Some(code) => (vec![code.clone()], "--single-target"),
        None => (args.targets.clone(), "--targets"),
    };
    check_codes(&vocabulary, &targets, flag)?;
    let schedule = Schedule {
        epochs: args.epochs as usize,
        batch_size: args.batch as usize,
        learning_rate: args.lr,
        seed: args.seed,
        split_ratio: args.split,
    };
    let config = ModelConfig { embed_dim: args.embed_dim as usize, hidden_dim: args.hidden_dim as usize, init_seed: args.seed, ..ModelConfig::default() };
    log::info!("training on {} samples for targets {targets:?}", samples.len());
    let outcome = train::<f64>(&vocabulary, &samples, config, targets, &schedule)?;
    for record in &outcome.history {
        log::info!(
            "epoch {}: train loss {:.5}, test nll {:.5}, test auc {}",
            record.epoch,
            record.train_loss,
            record.test.neg_log_likelihood,
            record.test.auc.map_or("undefined".into(), |a| format!("{a:.4}"))
        );
    }
    outcome.model.save(&args.out)?;
    print_report("test", outcome.final_report());
    let report = outcome.final_report();
    summary(json!({
        "checkpoint": args.out,
        "train_samples": outcome.split.train.len(),
        "test_samples": outcome.split.test.len(),
        "test_auc": report.auc,
        "test_neg_log_likelihood": report.neg_log_likelihood,
    }));
    Ok(())
}

fn evaluation_samples(samples: Vec<TrainingSample>, args: &EvalArgs) -> Result<Vec<TrainingSample>, CliError> {
    if args.all {
        return Ok(samples);
    }
    let split = split_by_patient(&samples, args.split, args.seed)?;
    Ok(split.test.iter().map(|&i| samples[i].clone()).collect())
}

fn eval(args: EvalArgs) -> CliResult {
    require_cohort(&args.cohort, "--cohort")?;
    require_file(&args.checkpoint, "--checkpoint")?;
    for p in &args.single_target_checkpoints {
        require_file(p, "--single-target-checkpoints")?;
    }
    let (vocabulary, samples) = read_cohort(&args.cohort)?;
    let model = Model::load_for(&args.checkpoint, &vocabulary)?;
    let singles = args.single_target_checkpoints.iter().map(|p| Model::load_for(p, &vocabulary)).collect::<Result<Vec<_>, _>>()?;
    let samples = evaluation_samples(samples, &args)?;
    let options = EvalOptions { bootstrap_seed: args.bootstrap_seed, ..EvalOptions::default() };
    let report = evaluate(&model, &vocabulary, &samples, &options)?;
    let table = if singles.is_empty() {
        comparison_table(&[("Model", &report)], b',')?
    } else {
        let stacked_codes: Vec<&String> = singles.iter().flat_map(|m| &m.target_codes).collect();
        if stacked_codes.iter().copied().ne(model.target_codes.iter()) {
            return Err(CliError::Flag {
                flag: "--single-target-checkpoints",
                message: format!("stacked targets {stacked_codes:?} differ from the checkpoint's {:?}", model.target_codes),
            });
        }
        let refs: Vec<&Model> = singles.iter().collect();
        let single = evaluate_stacked(&refs, &vocabulary, &samples, &options)?;
        print_report(SINGLE_COLUMN, &single);
        comparison_table(&[(SINGLE_COLUMN, &single), (MULTI_COLUMN, &report)], b',')?
    };
    print_report("model", &report);
    fs::write(&args.report, &table).map_err(|e| io_error(&args.report, e))?;
    print!("{table}");
    Ok(())
}

fn similar(args: SimilarArgs) -> CliResult {
    require_cohort(&args.cohort, "--cohort")?;
    require_file(&args.checkpoint, "--checkpoint")?;
    let (vocabulary, samples) = read_cohort(&args.cohort)?;
    let model = Model::load_for(&args.checkpoint, &vocabulary)?;
    let engine = Engine::new(vocabulary, samples, model)?;
    let focal = engine
        .patient(&args.patient)
        .ok_or_else(|| CliError::Flag { flag: "--patient", message: format!("no patient with id {:?}", args.patient) })?;
    let result = clinrisk_core::similarity::similar_patients(&focal.input.steps, &engine.samples, &engine.vectors, 1, args.band)?;
    let neighbours = result.ranked.iter().filter(|r| r.patient_id != args.patient).take(args.k as usize);
    for (rank, r) in neighbours.enumerate() {
        println!("{}", json!({ "rank": rank + 1, "patient_id": r.patient_id, "distance": r.distance }));
    }
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult {
    require_file(&args.config, "--config")?;
    let config = ServiceConfig::load(&args.config).map_err(|e| CliError::Runtime { kind: "config", message: e.to_string() })?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime { kind: "io", message: e.to_string() })?;
    runtime
        .block_on(clinrisk_service::serve(&config))
        .map_err(|e| CliError::Runtime { kind: "io", message: format!("{}: {e}", config.address()) })
}
