//! Reasoning-aware scores: step-weighted reasoning consistency (S_CC),
//! reasoning-answer alignment (S_CA) and internal coherence (S_Coh).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AttentionRequest, Capability, ForcedLogprobs, GatewayClient, GatewayError};
use crate::model::{ChainOfThought, EntitySet, DEFAULT_THINK_CLOSE, DEFAULT_THINK_OPEN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("cannot score an empty forced target")]
    EmptyTarget,
    #[error("no sampled outputs to score against")]
    NoSamples,
    #[error("reasoning text has no non-empty segment")]
    EmptyReasoning,
    #[error("every sampled answer failed teacher forcing; last error: {0}")]
    AllSamplesFailed(GatewayError),
    #[error("score unavailable: capability `{0}` missing")]
    Unavailable(Capability),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Attention,
    Uniform,
}

/// Normalized importance of each main-CoT step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepWeights {
    pub weights: Vec<f64>,
    pub source: WeightSource,
}

impl StepWeights {
    /// # Panics
    ///
    /// If `m` is zero.
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform weights need at least one step");
        Self {
            weights: vec![1.0 / m as f64; m],
            source: WeightSource::Uniform,
        }
    }

    /// Normalizes raw attention scores. Falls back to uniform when they sum
    /// to zero or contain anything negative or non-finite.
    pub fn from_raw(raw: &[f64]) -> Self {
        let total: f64 = raw.iter().sum();
        if raw.iter().any(|s| !s.is_finite() || *s < 0.0) || total <= 0.0 || !total.is_finite() {
            return Self::uniform(raw.len());
        }
        Self {
            weights: raw.iter().map(|s| s / total).collect(),
            source: WeightSource::Attention,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `Q <think> c1, c2, ... </think> A`, the text attention is read from.
pub fn canonical_attention_sequence(question: &str, steps: &[String], answer: &str) -> String {
    format!(
        "{question} {DEFAULT_THINK_OPEN} {} {DEFAULT_THINK_CLOSE} {answer}",
        steps.join(", ")
    )
}

/// Attention-derived step weights, or uniform weights when the backend
/// cannot provide them.
pub fn step_weights(gw: &GatewayClient, question: &str, steps: &[String], answer: &str) -> StepWeights {
    let req = AttentionRequest {
        question: question.to_string(),
        steps: steps.to_vec(),
        answer: answer.to_string(),
        sequence: canonical_attention_sequence(question, steps, answer),
    };
    match gw.attention_step_scores(&req) {
        Ok(scores) => StepWeights::from_raw(&scores.raw_scores),
        Err(GatewayError::CapabilityMissing(_)) => StepWeights::uniform(steps.len()),
        Err(e) => {
            tracing::warn!(error = %e, "attention scores unavailable; using uniform step weights");
            StepWeights::uniform(steps.len())
        }
    }
}

/// Normalized contradiction of `step` against a whole chain of thought.
pub fn contradiction_score(gw: &GatewayClient, step: &str, cot: &ChainOfThought) -> Result<f64, GatewayError> {
    let premise = cot.joined(" ");
    Ok(gw.nli_probabilities(&premise, step)?.contradiction_score())
}

/// Weighted mean contradiction given `deltas[j][i]` for main step `j`
/// against sampled chain `i`.
///
/// Dividing by the weight total (one up to rounding) keeps uniform rows
/// exact: all-contradicting chains score exactly 1.
pub fn s_cc_from_deltas(weights: &StepWeights, deltas: &[Vec<f64>]) -> f64 {
    assert_eq!(weights.len(), deltas.len(), "one delta row per main step");
    let total = weights.sum();
    let score: f64 = weights
        .weights
        .iter()
        .zip(deltas)
        .map(|(w, row)| {
            assert!(!row.is_empty(), "delta rows need at least one sample");
            w * (row.iter().sum::<f64>() / row.len() as f64)
        })
        .sum();
    (score / total).clamp(0.0, 1.0)
}

/// Reasoning consistency of the main chain against the sampled chains.
pub fn s_cc(
    gw: &GatewayClient,
    main_cot: &ChainOfThought,
    weights: &StepWeights,
    sampled_cots: &[ChainOfThought],
) -> Result<f64, ScoringError> {
    if sampled_cots.is_empty() {
        return Err(ScoringError::NoSamples);
    }
    let deltas = main_cot
        .steps
        .iter()
        .map(|step| {
            sampled_cots
                .iter()
                .map(|cot| contradiction_score(gw, step, cot))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(s_cc_from_deltas(weights, &deltas))
}

/// Mean negative log-likelihood per token, in nats.
pub fn lnpe(logprobs: &[f64]) -> Result<f64, ScoringError> {
    if logprobs.is_empty() {
        return Err(ScoringError::EmptyTarget);
    }
    Ok(-logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// What S_CA averages over each forced answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMeasure {
    /// Negative log-likelihood of the forced tokens.
    #[default]
    Nll,
    /// Entropy of the full next-token distribution at each forced position.
    /// Falls back to NLL when the backend does not report it.
    Entropy,
}

impl AlignmentMeasure {
    pub fn per_token(self, forced: &ForcedLogprobs) -> Result<f64, ScoringError> {
        match (self, &forced.entropies) {
            (AlignmentMeasure::Entropy, Some(h)) if !h.is_empty() => Ok(h.iter().sum::<f64>() / h.len() as f64),
            _ => lnpe(&forced.logprobs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentInput<'a> {
    pub question: &'a str,
    pub main_cot: &'a ChainOfThought,
    pub sampled_answers: Vec<&'a str>,
}

pub fn alignment_prompt(question: &str, main_cot: &ChainOfThought) -> String {
    format!("Question: {question}\nReasoning: {}\nAnswer: ", main_cot.joined("\n"))
}

/// Mean per-token uncertainty of the sampled answers when the main
/// reasoning is forced in as context.
///
/// Samples whose forced pass is refused or malformed are skipped and the
/// mean is taken over the rest. Transport failures abort.
pub fn s_ca(gw: &GatewayClient, input: &AlignmentInput<'_>, measure: AlignmentMeasure) -> Result<f64, ScoringError> {
    if input.sampled_answers.is_empty() {
        return Err(ScoringError::NoSamples);
    }
    let prompt = alignment_prompt(input.question, input.main_cot);
    let mut total = 0.0;
    let mut used = 0usize;
    let mut last_err = None;
    for answer in &input.sampled_answers {
        let result = if answer.trim().is_empty() {
            Err(GatewayError::InvalidRequest("empty sampled answer".into()))
        } else {
            gw.forced_logprobs(&prompt, answer)
        };
        match result {
            Ok(forced) => {
                total += measure.per_token(&forced)?;
                used += 1;
            }
            Err(e @ GatewayError::Transport(_)) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(error = %e, "skipping sampled answer in alignment score");
                last_err = Some(e);
            }
        }
    }
    match (used, last_err) {
        (0, Some(e)) => Err(ScoringError::AllSamplesFailed(e)),
        (0, None) => Err(ScoringError::NoSamples),
        _ => Ok((total / used as f64).max(0.0)),
    }
}

/// Share of reasoning entities that the extracted chain leaves out.
pub fn s_coh(e_r: &EntitySet, e_c: &EntitySet) -> f64 {
    if e_r.is_empty() {
        return 0.0;
    }
    let omitted = e_r.iter().filter(|e| !e_c.contains(e)).count();
    omitted as f64 / e_r.len() as f64
}
