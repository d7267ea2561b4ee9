//! Command-line front end. The `race` binary is a thin wrapper over [`run`].

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::aggregate::{optimize_weights, weighted_score, ComponentScores, WeightVector};
use crate::config::{ConfigError, RunConfig};
use crate::harness::store::read_meta;
use crate::harness::{
    compute_report, judge_label, load_dataset, normalize_metric, read_scores, run_detection, write_scores, DatasetError,
    DetectError, Detector, HarnessError, JudgeError, RunOptions, StoreError,
};
use crate::metrics::{auroc, train_test_split_head, MetricsError};
use crate::model::{OutputMode, QueryRecord};

#[derive(Debug, Parser)]
#[command(name = "race", version, about = "Hallucination detection for reasoning-model outputs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file and environment.
#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Output file of the command.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "lrm|cot|direct")]
    pub mode: Option<OutputMode>,
    /// Sampled outputs per question.
    #[arg(long, global = true, value_name = "INT")]
    pub n: Option<u32>,
    /// Answer clustering threshold.
    #[arg(long, global = true, value_name = "FLOAT")]
    pub threshold: Option<f64>,
    #[arg(long, global = true, value_name = "w_aa,w_ca,w_cc,w_coh")]
    pub weights: Option<WeightVector>,
    /// Serve every capability from the deterministic mock backend.
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_table: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "INT")]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one question end to end and print the result.
    Detect {
        #[arg(long)]
        question: String,
        #[arg(long)]
        context: Option<String>,
        /// Gold answer; repeat for several. Enables labeling.
        #[arg(long = "gold")]
        gold: Vec<String>,
        /// Print every intermediate (outputs, chains, clusters, weights).
        #[arg(long)]
        full: bool,
    },
    /// Score a dataset into a line-delimited score file, resuming by default.
    Batch {
        /// Discard an existing score file instead of resuming it.
        #[arg(long)]
        fresh: bool,
    },
    /// Label an existing score file with the judge model.
    Judge {
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
    },
    /// Per-metric AUROC of a labeled score file.
    Auroc {
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
    },
    /// Grid-search component weights on the head of a score file.
    Optimize {
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        train_fraction: f64,
    },
    /// Percentile-normalize one score column.
    Normalize {
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
        #[arg(long, default_value = "s_race")]
        metric: String,
    },
    /// Check a configuration without contacting any backend.
    ValidateConfig,
}

/// Failure reported as a JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip)]
    pub exit_code: u8,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            exit_code: 1,
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            ..Self::new("usage", message)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self {
            exit_code: 2,
            ..Self::new("config", e.to_string())
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::new("dataset", e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let kind = match e {
            StoreError::FingerprintMismatch { .. } => "fingerprint_mismatch",
            _ => "store",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = match e {
            MetricsError::DegenerateLabels => "degenerate_labels",
            _ => "metrics",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Store(e) => e.into(),
            HarnessError::Config(m) => Self {
                exit_code: 2,
                ..Self::new("config", m)
            },
            e => Self::new("harness", e.to_string()),
        }
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        Self::new("detection", e.to_string())
    }
}

impl From<JudgeError> for CliError {
    fn from(e: JudgeError) -> Self {
        Self::new("judge", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

/// Effective configuration: file, then environment, then flags.
pub fn resolve_config(g: &GlobalArgs, env: impl Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env);
    if let Some(p) = &g.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(n) = g.n {
        cfg.samples = n;
    }
    if let Some(t) = g.threshold {
        cfg.threshold = t;
    }
    if let Some(w) = g.weights {
        cfg.weights = Some(w.as_array());
    }
    if g.mock {
        cfg.mock.enabled = true;
    }
    if let Some(p) = &g.mock_table {
        cfg.mock.table = Some(p.clone());
    }
    if let Some(s) = g.seed {
        cfg.mock.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(flag: Option<&'a PathBuf>, config: Option<&'a PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    flag.or(config)
        .map(PathBuf::as_path)
        .ok_or_else(|| CliError::usage(format!("no {what} path: pass a flag or set it under [paths]")))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    writeln!(out, "{}", serde_json::to_string_pretty(value).expect("output serializes"))?;
    Ok(())
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs one parsed command, writing its result to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global, |k| std::env::var(k).ok())?;
    let g = &cli.global;
    match &cli.command {
        Command::ValidateConfig => print_json(
            out,
            &serde_json::json!({ "valid": true, "fingerprint": cfg.fingerprint()? }),
        ),
        Command::Detect {
            question,
            context,
            gold,
            full,
        } => {
            let rec = QueryRecord {
                id: "cli".into(),
                question: question.clone(),
                context: context.clone(),
                gold_answers: gold.clone(),
            };
            let gateways = cfg.gateways(Some(std::slice::from_ref(&rec)))?;
            let detector = Detector::new(cfg.pipeline_config()?, gateways)?;
            let detection = detector.detect(&rec)?;
            if *full {
                print_json(out, &detection)
            } else {
                print_json(out, &detection.to_record())
            }
        }
        Command::Batch { fresh } => {
            let dataset_path = required(g.dataset.as_ref(), cfg.paths.dataset.as_ref(), "dataset")?;
            let scores = required(g.out.as_ref(), cfg.paths.scores.as_ref(), "output scores")?;
            let records = load_dataset(dataset_path)?;
            let detector = Detector::new(cfg.pipeline_config()?, cfg.gateways(Some(&records))?)?;
            let summary = run_detection(
                &detector,
                &records,
                &RunOptions {
                    out: scores.to_path_buf(),
                    fingerprint: cfg.fingerprint()?,
                    resume: !fresh,
                },
            )?;
            print_json(
                out,
                &serde_json::json!({
                    "scores": scores,
                    "total": summary.total,
                    "already_done": summary.already_done,
                    "written": summary.written,
                    "skipped": summary.skipped,
                }),
            )
        }
        Command::Judge { scores } => {
            let scores = required(scores.as_ref(), cfg.paths.scores.as_ref(), "scores")?;
            let dataset_path = required(g.dataset.as_ref(), cfg.paths.dataset.as_ref(), "dataset")?;
            let dataset = load_dataset(dataset_path)?;
            let judge = cfg
                .gateways(Some(&dataset))?
                .judge
                .ok_or_else(|| CliError::usage("no judge endpoint configured"))?;
            let mut records = read_scores(scores)?;
            let (mut labeled, mut hallucinated) = (0usize, 0usize);
            for rec in records.iter_mut().filter(|r| !r.skipped) {
                let Some(answer) = rec.main_answer.clone() else { continue };
                let Some(q) = dataset.iter().find(|q| q.id == rec.id) else { continue };
                if q.gold_answers.is_empty() {
                    continue;
                }
                let verdict = judge_label(&judge, &q.question, &q.gold_answers, &answer)?;
                rec.set_label(&verdict);
                labeled += 1;
                hallucinated += usize::from(verdict.hallucinated);
            }
            let target = g.out.as_deref().unwrap_or(scores);
            write_scores(target, &records)?;
            print_json(
                out,
                &serde_json::json!({
                    "scores": target,
                    "records": records.len(),
                    "labeled": labeled,
                    "hallucinated": hallucinated,
                }),
            )
        }
        Command::Auroc { scores } => {
            let scores = required(scores.as_ref(), cfg.paths.scores.as_ref(), "scores")?;
            let records = read_scores(scores)?;
            let fingerprint = read_meta(scores)?.map(|m| m.config_fingerprint);
            let report = compute_report(&records, fingerprint)?;
            if let Some(path) = g.out.as_ref().or(cfg.paths.report.as_ref()) {
                write_json_file(path, &report)?;
            }
            print_json(out, &report)
        }
        Command::Optimize { scores, train_fraction } => {
            let scores = required(scores.as_ref(), cfg.paths.scores.as_ref(), "scores")?;
            let result = optimize_file(scores, *train_fraction)?;
            if let Some(path) = &g.out {
                write_json_file(path, &result)?;
            }
            print_json(out, &result)
        }
        Command::Normalize { scores, metric } => {
            let scores = required(scores.as_ref(), cfg.paths.scores.as_ref(), "scores")?;
            let rows = normalize_metric(&read_scores(scores)?, metric)?;
            let mut text = String::new();
            for row in &rows {
                text.push_str(&serde_json::to_string(row).expect("row serializes"));
                text.push('\n');
            }
            match &g.out {
                Some(path) => std::fs::write(path, text)?,
                None => out.write_all(text.as_bytes())?,
            }
            Ok(())
        }
    }
}

/// Outcome of tuning weights on a score file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub weights: WeightVector,
    pub grid_point: [u32; 4],
    pub train_auroc: f64,
    /// `None` when the held-out part holds a single class.
    pub test_auroc: Option<f64>,
    pub evaluations: usize,
    pub train_size: usize,
    pub test_size: usize,
}

/// Tunes on the first `train_fraction` of the labeled records in file order
/// and scores the rest.
pub fn optimize_file(scores: &Path, train_fraction: f64) -> Result<OptimizeResult, CliError> {
    let rows: Vec<(ComponentScores, OutputMode, bool)> = read_scores(scores)?
        .into_iter()
        .filter(|r| !r.skipped)
        .filter_map(|r| Some((r.scores?.components(), r.mode, r.hallucinated?)))
        .collect();
    let (train, test) = train_test_split_head(&rows, train_fraction)?;
    let train_set: Vec<(ComponentScores, bool)> = train.iter().map(|(c, m, l)| (c.masked(*m), *l)).collect();
    let outcome = optimize_weights(&train_set)?;
    let test_scores: Vec<f64> = test.iter().map(|(c, m, _)| weighted_score(c, &outcome.weights, *m)).collect();
    let test_labels: Vec<bool> = test.iter().map(|(_, _, l)| *l).collect();
    let test_auroc = match auroc(&test_scores, &test_labels) {
        Ok(v) => Some(v),
        Err(MetricsError::DegenerateLabels) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(OptimizeResult {
        weights: outcome.weights,
        grid_point: outcome.grid_point,
        train_auroc: outcome.train_auroc,
        test_auroc,
        evaluations: outcome.evaluations,
        train_size: train.len(),
        test_size: test.len(),
    })
}
