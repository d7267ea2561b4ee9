//! Typed access to the inference gateway.
//!
//! Every neural capability the engine needs (generation, embeddings, NLI,
//! teacher-forced log-probabilities, attention step scores, NER and chain of
//! thought extraction) sits behind the [`Backend`] trait. [`HttpBackend`]
//! speaks the `/v1` JSON protocol, [`MockBackend`] answers from tables and
//! deterministic rules. [`GatewayClient`] wraps either one and validates
//! every request and response.

mod http;
mod mock;
mod ner;
pub mod wire;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TokenLogprob;

pub use http::HttpBackend;
pub use mock::{AttentionRule, ExtractRule, Fact, ForcedRule, GenerateRule, MockBackend, MockStyle, MockTable, NliRule};
pub use ner::rule_based_entities;

pub const ENV_GATEWAY_URL: &str = "RACE_GATEWAY_URL";
pub const ENV_API_KEY: &str = "RACE_API_KEY";

/// Tolerance on the NLI probability simplex.
pub const NLI_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend refused the request (status {status}): {message}")]
    BackendRefused { status: u16, message: String },
    #[error("capability `{0}` is not available on this backend")]
    CapabilityMissing(Capability),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("embedding dimension changed from {expected} to {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Generate,
    /// Token log-probabilities on generated text (gray-box access).
    Logprobs,
    Embed,
    Nli,
    ForcedLogprobs,
    Attention,
    Ner,
    Extract,
}

impl Capability {
    pub const ALL: [Capability; 8] = [
        Capability::Generate,
        Capability::Logprobs,
        Capability::Embed,
        Capability::Nli,
        Capability::ForcedLogprobs,
        Capability::Attention,
        Capability::Ner,
        Capability::Extract,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Generate => "generate",
            Capability::Logprobs => "logprobs",
            Capability::Embed => "embed",
            Capability::Nli => "nli",
            Capability::ForcedLogprobs => "forced_logprobs",
            Capability::Attention => "attention",
            Capability::Ner => "ner",
            Capability::Extract => "extract",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown capability `{s}`"))
    }
}

/// Where a gateway lives and how hard the client may push it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayEndpoint {
    pub base_url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Extra attempts for transport failures.
    pub retries: u32,
    /// Allow retrying sampled generation, which is not idempotent.
    pub retry_sampling: bool,
}

impl Default for GatewayEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".to_string(),
            api_key: None,
            timeout_secs: 120,
            max_in_flight: 8,
            retries: 2,
            retry_sampling: false,
        }
    }
}

impl GatewayEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.timeout_secs == 0 {
            return Err("timeout_secs must be positive".into());
        }
        let url = self.base_url.trim();
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(format!("base_url `{url}` must start with http:// or https://"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub decoding: Decoding,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: u32,
    pub return_logprobs: bool,
}

impl GenerationConfig {
    pub fn greedy(max_tokens: u32) -> Self {
        Self {
            decoding: Decoding::Greedy,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens,
            n: 1,
            return_logprobs: false,
        }
    }

    pub fn sampling(n: u32, temperature: f64, top_p: f64, max_tokens: u32) -> Self {
        Self {
            decoding: Decoding::Sample,
            temperature,
            top_p,
            max_tokens,
            n,
            return_logprobs: false,
        }
    }

    pub fn with_logprobs(mut self, on: bool) -> Self {
        self.return_logprobs = on;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidRequest(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.decoding == Decoding::Greedy && self.n != 1 {
            return bad(format!("greedy decoding yields one completion, got n={}", self.n));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.decoding == Decoding::Sample && !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("sampling temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            logprobs: None,
        }
    }
}

/// Three-way NLI distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub p_entail: f64,
    pub p_neutral: f64,
    pub p_contradict: f64,
}

impl NliVerdict {
    pub fn new(p_entail: f64, p_neutral: f64, p_contradict: f64) -> Self {
        Self {
            p_entail,
            p_neutral,
            p_contradict,
        }
    }

    pub fn entailment() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub fn contradiction() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let parts = [self.p_entail, self.p_neutral, self.p_contradict];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(GatewayError::Protocol(format!("NLI probabilities out of range: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > NLI_SUM_TOLERANCE {
            return Err(GatewayError::Protocol(format!("NLI probabilities sum to {sum}")));
        }
        Ok(())
    }

    /// Contradiction renormalized against entailment, ignoring the neutral
    /// mass. Defined as 0.5 when both are zero.
    pub fn contradiction_score(&self) -> f64 {
        let denom = self.p_entail + self.p_contradict;
        if denom <= 0.0 {
            0.5
        } else {
            self.p_contradict / denom
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine similarity; zero vectors are orthogonal to everything.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na = self.values.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.values.iter().map(|b| b * b).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Per-token log-probabilities (nats) of a target under teacher forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedLogprobs {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Full next-token distribution entropy at each forced position, when
    /// the backend reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropies: Option<Vec<f64>>,
}

impl ForcedLogprobs {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(GatewayError::Protocol(format!(
                "{} tokens but {} log-probabilities",
                self.tokens.len(),
                self.logprobs.len()
            )));
        }
        // Small positive values are float noise from log-softmax.
        if let Some(bad) = self.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 1e-9) {
            return Err(GatewayError::Protocol(format!("invalid log-probability {bad}")));
        }
        if let Some(ent) = &self.entropies {
            if ent.len() != self.tokens.len() || ent.iter().any(|h| !h.is_finite() || *h < -1e-9) {
                return Err(GatewayError::Protocol("invalid per-position entropies".into()));
            }
        }
        Ok(())
    }
}

/// Unnormalized answer-to-step attention scores, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStepScores {
    pub raw_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRequest {
    pub question: String,
    pub steps: Vec<String>,
    pub answer: String,
    /// The exact text the gateway must score; see
    /// [`crate::reasoning::canonical_attention_sequence`].
    pub sequence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub question: String,
    pub reasoning: String,
    pub answer: String,
    pub system_prompt: String,
    pub user_prompt: String,
}

/// Raw capability surface. Implementations report failures but do not
/// validate; [`GatewayClient`] does that uniformly.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> Result<Vec<Capability>, GatewayError>;
    fn generate(&self, prompt: &str, cfg: &GenerationConfig) -> Result<Vec<Completion>, GatewayError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError>;
    fn forced_logprobs(&self, prompt: &str, target: &str) -> Result<ForcedLogprobs, GatewayError>;
    fn attention(&self, req: &AttentionRequest) -> Result<Vec<f64>, GatewayError>;
    fn ner(&self, text: &str) -> Result<Vec<String>, GatewayError>;
    fn extract(&self, req: &ExtractionRequest) -> Result<String, GatewayError>;
}

/// Validating front for a [`Backend`]. Cheap to clone; clones share the
/// backend and the embedding dimension observed in this session.
#[derive(Clone)]
pub struct GatewayClient {
    backend: Arc<dyn Backend>,
    dim: Arc<Mutex<Option<usize>>>,
}

impl fmt::Debug for GatewayClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GatewayClient").finish_non_exhaustive()
    }
}

impl GatewayClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            dim: Arc::new(Mutex::new(None)),
        }
    }

    pub fn http(endpoint: &GatewayEndpoint) -> Result<Self, GatewayError> {
        Ok(Self::new(Arc::new(HttpBackend::new(endpoint.clone())?)))
    }

    pub fn mock(backend: MockBackend) -> Self {
        Self::new(Arc::new(backend))
    }

    pub fn capabilities(&self) -> Result<Vec<Capability>, GatewayError> {
        self.backend.capabilities()
    }

    pub fn generate(&self, prompt: &str, cfg: &GenerationConfig) -> Result<Vec<Completion>, GatewayError> {
        cfg.validate()?;
        let out = self.backend.generate(prompt, cfg)?;
        if out.len() != cfg.n as usize {
            return Err(GatewayError::Protocol(format!(
                "requested {} completions, received {}",
                cfg.n,
                out.len()
            )));
        }
        for c in &out {
            match (&c.logprobs, cfg.return_logprobs) {
                (None, true) => {
                    return Err(GatewayError::Protocol("completion is missing requested logprobs".into()))
                }
                (Some(lps), true) => {
                    if let Some(bad) = lps.iter().find(|t| !t.logprob.is_finite() || t.logprob > 1e-9) {
                        return Err(GatewayError::Protocol(format!("invalid token logprob {}", bad.logprob)));
                    }
                }
                _ => {}
            }
        }
        if !cfg.return_logprobs {
            return Ok(out.into_iter().map(|c| Completion { logprobs: None, ..c }).collect());
        }
        Ok(out)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("embed needs at least one text".into()));
        }
        let rows = self.backend.embed(texts)?;
        if rows.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "sent {} texts, received {} embeddings",
                texts.len(),
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
            return Err(GatewayError::Protocol("embeddings are empty, ragged or non-finite".into()));
        }
        let mut seen = self.dim.lock().expect("dimension lock poisoned");
        match *seen {
            Some(expected) if expected != dim => {
                return Err(GatewayError::DimensionMismatch { expected, found: dim });
            }
            None => *seen = Some(dim),
            _ => {}
        }
        Ok(rows.into_iter().map(EmbeddingVector::new).collect())
    }

    pub fn nli_probabilities(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("NLI premise and hypothesis must be non-empty".into()));
        }
        let verdict = self.backend.nli(premise, hypothesis)?;
        verdict.validate()?;
        Ok(verdict)
    }

    pub fn forced_logprobs(&self, prompt: &str, target: &str) -> Result<ForcedLogprobs, GatewayError> {
        if target.is_empty() {
            return Err(GatewayError::InvalidRequest("forced target must be non-empty".into()));
        }
        let out = self.backend.forced_logprobs(prompt, target)?;
        out.validate()?;
        if out.tokens.is_empty() {
            return Err(GatewayError::Protocol("non-empty target scored as zero tokens".into()));
        }
        Ok(out)
    }

    pub fn attention_step_scores(&self, req: &AttentionRequest) -> Result<AttentionStepScores, GatewayError> {
        if req.steps.is_empty() || req.answer.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("attention needs steps and a non-empty answer".into()));
        }
        let raw_scores = self.backend.attention(req)?;
        if raw_scores.len() != req.steps.len() {
            return Err(GatewayError::Protocol(format!(
                "{} steps submitted, {} scores returned",
                req.steps.len(),
                raw_scores.len()
            )));
        }
        if raw_scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(GatewayError::Protocol("attention scores must be finite and non-negative".into()));
        }
        Ok(AttentionStepScores { raw_scores })
    }

    pub fn ner_entities(&self, text: &str) -> Result<Vec<String>, GatewayError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        self.backend.ner(text)
    }

    /// NER through the backend, or the capitalized-run rule when the
    /// backend has no NER model.
    pub fn ner_entities_or_fallback(&self, text: &str) -> Result<Vec<String>, GatewayError> {
        match self.ner_entities(text) {
            Err(GatewayError::CapabilityMissing(_)) => Ok(rule_based_entities(text)),
            other => other,
        }
    }

    pub fn extract_cot_raw(&self, req: &ExtractionRequest) -> Result<String, GatewayError> {
        if req.reasoning.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("reasoning to extract from is empty".into()));
        }
        self.backend.extract(req)
    }
}
