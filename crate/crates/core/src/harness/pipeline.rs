//! Per-record detection and the concurrent, resumable batch runner.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::judge::{judge_label, JudgeVerdict};
use super::store::{self, RunMeta, ScoreRecord, ScoreWriter, StoreError};
use crate::aggregate::{
    baseline_lnpe_main, baseline_race_raw, baseline_s_rr, baseline_scg_nli, baseline_seu, weighted_score,
    ComponentScores, ScoreBundle, WeightVector, BASELINE_LNPE, BASELINE_RACE_PLUS, BASELINE_RACE_RAW,
    BASELINE_SCG_NLI, BASELINE_SEU, BASELINE_SINDEX_ONLY, BASELINE_S_RR,
};
use crate::answer::{answer_uncertainty, ClusterSet, DEFAULT_CLUSTER_THRESHOLD};
use crate::extraction::{fallback_segments, fill_slots, CotExtractor, ExtractionError, ExtractionPromptTemplate};
use crate::gateway::{Capability, GatewayClient, GatewayError, GenerationConfig};
use crate::model::{
    normalize_entities, parse_output, ChainOfThought, EntitySet, ModelOutput, OutputMode, ParseError, QueryRecord,
    SampleSet, ThinkTags,
};
use crate::reasoning::{s_ca, s_cc, s_coh, step_weights, AlignmentInput, AlignmentMeasure, ScoringError, StepWeights};

pub const COT_GENERATION_TEMPLATE: &str = "Question: {question}\n\n- Think step by step using the format: \"Thought: ...\"\n- Then conclude with the answer using the format: \"Answer: ...\"";

/// Scoring and generation settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: OutputMode,
    pub samples: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub threshold: f64,
    pub alignment: AlignmentMeasure,
    /// Adds a `race_plus` baseline computed with these weights.
    pub weights: Option<WeightVector>,
    pub think_tags: ThinkTags,
    pub extraction: ExtractionPromptTemplate,
    pub workers: usize,
    /// Label records that carry gold answers while scoring them.
    pub label: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: OutputMode::Lrm,
            samples: 5,
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 2048,
            threshold: DEFAULT_CLUSTER_THRESHOLD,
            alignment: AlignmentMeasure::Nll,
            weights: None,
            think_tags: ThinkTags::default(),
            extraction: ExtractionPromptTemplate::default(),
            workers: 1,
            label: true,
        }
    }
}

/// Where each capability is served from. Generation, teacher forcing and
/// attention come from the model under test; embeddings, NLI, NER and
/// extraction from the support backend.
#[derive(Debug, Clone)]
pub struct Gateways {
    pub generation: GatewayClient,
    pub support: GatewayClient,
    pub judge: Option<GatewayClient>,
}

impl Gateways {
    /// One backend for everything, including the judge.
    pub fn single(gw: GatewayClient) -> Self {
        Self {
            generation: gw.clone(),
            support: gw.clone(),
            judge: Some(gw),
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("main output unusable: {0}")]
    MainUnparseable(#[from] ParseError),
    #[error("main answer is empty")]
    EmptyAnswer,
    #[error("no usable sampled outputs")]
    NoUsableSamples,
    #[error("extraction failed: {0}")]
    Extraction(#[from] ExtractionError),
    #[error("scoring failed: {0}")]
    Scoring(#[from] ScoringError),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}

/// Everything computed for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub main: ModelOutput,
    pub samples: Vec<ModelOutput>,
    pub main_cot: ChainOfThought,
    pub sample_cots: Vec<ChainOfThought>,
    pub weights: StepWeights,
    pub clusters: ClusterSet,
    pub reasoning_entities: EntitySet,
    pub cot_entities: EntitySet,
    pub scores: ScoreBundle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<JudgeVerdict>,
}

impl Detection {
    pub fn to_record(&self) -> ScoreRecord {
        ScoreRecord {
            id: self.id.clone(),
            mode: self.scores.mode,
            skipped: false,
            reason: None,
            main_answer: Some(self.main.answer.clone()),
            scores: Some(self.scores.clone()),
            judge_choice: self.label.as_ref().map(|l| l.choice),
            hallucinated: self.label.as_ref().map(|l| l.hallucinated),
        }
    }
}

/// Model input for a record: the bare question (with its context, if any),
/// wrapped in the step-by-step template for prompted chain of thought.
pub fn generation_prompt(rec: &QueryRecord, mode: OutputMode) -> String {
    let question = match rec.context.as_deref() {
        Some(ctx) if !ctx.trim().is_empty() => format!("Context: {ctx}\nQuestion: {}", rec.question),
        _ => rec.question.clone(),
    };
    match mode {
        OutputMode::CotPrompt => fill_slots(COT_GENERATION_TEMPLATE, &[("{question}", &question)]),
        OutputMode::Lrm | OutputMode::Direct => question,
    }
}

pub struct Detector {
    cfg: PipelineConfig,
    gw: Gateways,
    extractor: CotExtractor,
}

impl Detector {
    pub fn new(cfg: PipelineConfig, gw: Gateways) -> Result<Self, HarnessError> {
        if cfg.samples == 0 {
            return Err(HarnessError::Config("samples must be at least 1".into()));
        }
        if !(cfg.threshold > 0.0 && cfg.threshold <= 1.0) {
            return Err(HarnessError::Config(format!("threshold {} outside (0, 1]", cfg.threshold)));
        }
        if cfg.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        GenerationConfig::sampling(cfg.samples, cfg.temperature, cfg.top_p, cfg.max_tokens)
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let extractor = CotExtractor::new(gw.support.clone(), cfg.extraction.clone())?;
        Ok(Self { cfg, gw, extractor })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn generate_main(&self, prompt: &str) -> Result<ModelOutput, DetectError> {
        let greedy = GenerationConfig::greedy(self.cfg.max_tokens);
        let completion = match self.gw.generation.generate(prompt, &greedy.clone().with_logprobs(true)) {
            Err(GatewayError::CapabilityMissing(Capability::Logprobs)) => self.gw.generation.generate(prompt, &greedy),
            other => other,
        }?
        .into_iter()
        .next()
        .expect("greedy returns one completion");
        let mut main = parse_output(&completion.text, self.cfg.mode, true, &self.cfg.think_tags)?;
        if main.answer.trim().is_empty() {
            return Err(DetectError::EmptyAnswer);
        }
        main.token_logprobs = completion.logprobs;
        Ok(main)
    }

    fn generate_samples(&self, prompt: &str) -> Result<Vec<ModelOutput>, DetectError> {
        let cfg = GenerationConfig::sampling(self.cfg.samples, self.cfg.temperature, self.cfg.top_p, self.cfg.max_tokens);
        let outputs = self
            .gw
            .generation
            .generate(prompt, &cfg)?
            .into_iter()
            .filter_map(|c| match parse_output(&c.text, self.cfg.mode, false, &self.cfg.think_tags) {
                Ok(o) if !o.answer.trim().is_empty() => Some(o),
                Ok(_) => {
                    tracing::warn!("dropping sampled output with an empty answer");
                    None
                }
                Err(e) => {
                    tracing::warn!(error = %e, "dropping unparseable sampled output");
                    None
                }
            })
            .collect::<Vec<_>>();
        if outputs.is_empty() {
            return Err(DetectError::NoUsableSamples);
        }
        Ok(outputs)
    }

    /// Runs generation, extraction and every score for one record.
    pub fn detect(&self, rec: &QueryRecord) -> Result<Detection, DetectError> {
        let prompt = generation_prompt(rec, self.cfg.mode);
        let main = self.generate_main(&prompt)?;
        let samples = self.generate_samples(&prompt)?;
        let set = SampleSet::new(main, samples).map_err(|_| DetectError::NoUsableSamples)?;
        let support = &self.gw.support;
        let model = &self.gw.generation;

        let main_cot = self.extractor.extract_cot(rec, &set.main)?;
        let sample_cots = set
            .samples
            .iter()
            .map(|s| self.extractor.extract_cot(rec, s))
            .collect::<Result<Vec<_>, _>>()?;

        let answers: Vec<String> = set.answers().into_iter().map(str::to_string).collect();
        let vectors = support.embed(&answers)?;
        let (s_aa, clusters) = answer_uncertainty(&vectors, self.cfg.threshold);

        let weights = step_weights(model, &rec.question, &main_cot.steps, &set.main.answer);
        let s_cc_score = s_cc(support, &main_cot, &weights, &sample_cots)?;

        let sampled_answers: Vec<&str> = set.samples.iter().map(|s| s.answer.as_str()).collect();
        let alignment = AlignmentInput {
            question: &rec.question,
            main_cot: &main_cot,
            sampled_answers: sampled_answers.clone(),
        };
        let s_ca_score = s_ca(model, &alignment, self.cfg.alignment)?;

        let reasoning_entities = normalize_entities(support.ner_entities_or_fallback(set.main.reasoning_source())?);
        let cot_entities = normalize_entities(support.ner_entities_or_fallback(&main_cot.joined(" "))?);
        let s_coh_score = s_coh(&reasoning_entities, &cot_entities);

        let components = ComponentScores::new(s_aa, s_ca_score, s_cc_score, s_coh_score);
        let mut baselines = BTreeMap::new();
        match baseline_lnpe_main(&set.main) {
            Ok(v) => {
                baselines.insert(BASELINE_LNPE.to_string(), v);
            }
            Err(ScoringError::Unavailable(_)) => {}
            Err(e) => return Err(e.into()),
        }
        baselines.insert(BASELINE_SEU.to_string(), baseline_seu(&vectors));
        baselines.insert(
            BASELINE_SCG_NLI.to_string(),
            baseline_scg_nli(support, &set.main.answer, &sampled_answers)?,
        );
        let s_rr = baseline_s_rr(support, &set)?;
        baselines.insert(BASELINE_S_RR.to_string(), s_rr);
        let raw_main = fallback_segments(set.main.reasoning_source())?;
        let raw_alignment = AlignmentInput {
            question: &rec.question,
            main_cot: &raw_main,
            sampled_answers,
        };
        let s_ra = s_ca(model, &raw_alignment, self.cfg.alignment)?;
        let raw = ComponentScores::new(s_aa, s_ra, s_rr, s_coh_score);
        baselines.insert(BASELINE_RACE_RAW.to_string(), baseline_race_raw(&raw, self.cfg.mode));
        baselines.insert(BASELINE_SINDEX_ONLY.to_string(), s_aa);
        if let Some(w) = &self.cfg.weights {
            baselines.insert(BASELINE_RACE_PLUS.to_string(), weighted_score(&components, w, self.cfg.mode));
        }

        let label = self.label(rec, &set.main.answer);
        Ok(Detection {
            id: rec.id.clone(),
            scores: ScoreBundle::new(components, self.cfg.mode, baselines),
            main: set.main,
            samples: set.samples,
            main_cot,
            sample_cots,
            weights,
            clusters,
            reasoning_entities,
            cot_entities,
            label,
        })
    }

    fn label(&self, rec: &QueryRecord, answer: &str) -> Option<JudgeVerdict> {
        if !self.cfg.label || rec.gold_answers.is_empty() {
            return None;
        }
        let judge = self.gw.judge.as_ref()?;
        match judge_label(judge, &rec.question, &rec.gold_answers, answer) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::warn!(id = %rec.id, error = %e, "judge failed; record left unlabeled");
                None
            }
        }
    }

    /// [`Detector::detect`] with failures turned into skipped records.
    pub fn score_record(&self, rec: &QueryRecord) -> ScoreRecord {
        match self.detect(rec) {
            Ok(d) => d.to_record(),
            Err(e) => {
                tracing::warn!(id = %rec.id, error = %e, "record skipped");
                ScoreRecord::skipped(rec.id.clone(), self.cfg.mode, e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub fingerprint: String,
    /// Keep records already in `out` and score only the rest. Without it the
    /// file is started over.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub total: usize,
    pub already_done: usize,
    pub written: usize,
    pub skipped: usize,
    pub records: Vec<ScoreRecord>,
}

/// Scores `records` into a line-delimited file.
///
/// Records are processed by up to `workers` threads but written in input
/// order, one flushed line each, so the file is the same for any worker
/// count and an interrupted run can be resumed from it.
pub fn run_detection(detector: &Detector, records: &[QueryRecord], opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    let done: HashSet<String> = if opts.resume {
        if let Some(meta) = store::read_meta(&opts.out)? {
            if meta.config_fingerprint != opts.fingerprint && opts.out.exists() {
                return Err(StoreError::FingerprintMismatch {
                    path: opts.out.display().to_string(),
                    expected: opts.fingerprint.clone(),
                    found: meta.config_fingerprint,
                }
                .into());
            }
        }
        store::recover_for_resume(&opts.out)?.into_iter().collect()
    } else {
        if opts.out.exists() {
            std::fs::remove_file(&opts.out).map_err(|source| StoreError::Io {
                path: opts.out.display().to_string(),
                source,
            })?;
        }
        HashSet::new()
    };
    let mut writer = ScoreWriter::append(&opts.out)?;
    store::write_meta(
        &opts.out,
        &RunMeta {
            config_fingerprint: opts.fingerprint.clone(),
            mode: detector.cfg.mode,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )?;

    let pending: Vec<&QueryRecord> = records.iter().filter(|r| !done.contains(&r.id)).collect();
    let mut summary = RunSummary {
        total: records.len(),
        already_done: records.len() - pending.len(),
        ..Default::default()
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = detector.cfg.workers.min(pending.len()).max(1);

    thread::scope(|s| -> Result<(), HarnessError> {
        let (tx, rx) = mpsc::channel::<(usize, ScoreRecord)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, pending) = (&next, &abort, &pending);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() || abort.load(Ordering::SeqCst) {
                    break;
                }
                if tx.send((i, detector.score_record(pending[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer = BTreeMap::new();
        let mut want = 0usize;
        for (i, rec) in rx {
            buffer.insert(i, rec);
            while let Some(rec) = buffer.remove(&want) {
                if let Err(e) = writer.write(&rec) {
                    abort.store(true, Ordering::SeqCst);
                    return Err(e.into());
                }
                summary.written += 1;
                summary.skipped += usize::from(rec.skipped);
                summary.records.push(rec);
                want += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}
