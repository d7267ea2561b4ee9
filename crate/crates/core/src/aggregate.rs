//! Combining component scores into RACE, tuning component weights, and the
//! sampling-consistency baselines reported alongside it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::extraction::fallback_segments;
use crate::gateway::{Capability, EmbeddingVector, GatewayClient};
use crate::metrics::{auroc, MetricsError};
use crate::model::{ModelOutput, OutputMode, SampleSet};
use crate::reasoning::{lnpe, s_cc, ScoringError, StepWeights};

pub const BASELINE_LNPE: &str = "lnpe";
pub const BASELINE_SEU: &str = "seu";
pub const BASELINE_SCG_NLI: &str = "scg_nli";
pub const BASELINE_S_RR: &str = "s_rr";
pub const BASELINE_RACE_RAW: &str = "race_raw";
pub const BASELINE_SINDEX_ONLY: &str = "sindex_only";
pub const BASELINE_RACE_PLUS: &str = "race_plus";

/// Grid resolution for weight search: steps of 1/20 on each axis.
pub const GRID_STEPS: u32 = 20;

/// The four RACE components, in canonical order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub s_aa: f64,
    pub s_ca: f64,
    pub s_cc: f64,
    pub s_coh: f64,
}

impl ComponentScores {
    pub fn new(s_aa: f64, s_ca: f64, s_cc: f64, s_coh: f64) -> Self {
        Self { s_aa, s_ca, s_cc, s_coh }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s_aa, self.s_ca, self.s_cc, self.s_coh]
    }

    /// Components as they enter the sum: coherence only counts for
    /// reasoning-model output.
    pub fn masked(&self, mode: OutputMode) -> Self {
        match mode {
            OutputMode::Lrm => *self,
            OutputMode::CotPrompt | OutputMode::Direct => Self { s_coh: 0.0, ..*self },
        }
    }
}

/// Every score emitted for one record. Larger always means more likely
/// hallucinated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub s_aa: f64,
    pub s_ca: f64,
    pub s_cc: f64,
    pub s_coh: f64,
    pub s_race: f64,
    pub mode: OutputMode,
    #[serde(default)]
    pub baselines: BTreeMap<String, f64>,
}

impl ScoreBundle {
    pub fn new(c: ComponentScores, mode: OutputMode, baselines: BTreeMap<String, f64>) -> Self {
        Self {
            s_aa: c.s_aa,
            s_ca: c.s_ca,
            s_cc: c.s_cc,
            s_coh: c.s_coh,
            s_race: race_score(&c, mode),
            mode,
            baselines,
        }
    }

    pub fn components(&self) -> ComponentScores {
        ComponentScores::new(self.s_aa, self.s_ca, self.s_cc, self.s_coh)
    }

    /// Looks up a component, `s_race`, or a baseline by name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "s_aa" => Some(self.s_aa),
            "s_ca" => Some(self.s_ca),
            "s_cc" => Some(self.s_cc),
            "s_coh" => Some(self.s_coh),
            "s_race" => Some(self.s_race),
            other => self.baselines.get(other).copied(),
        }
    }

    /// Names of every metric present, components first.
    pub fn metric_names(&self) -> Vec<String> {
        ["s_aa", "s_ca", "s_cc", "s_coh", "s_race"]
            .into_iter()
            .map(str::to_string)
            .chain(self.baselines.keys().cloned())
            .collect()
    }
}

pub fn race_score(c: &ComponentScores, mode: OutputMode) -> f64 {
    c.masked(mode).as_array().iter().sum()
}

/// Component weights, ordered `(aa, ca, cc, coh)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w_aa: f64,
    pub w_ca: f64,
    pub w_cc: f64,
    pub w_coh: f64,
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::equal()
    }
}

impl WeightVector {
    pub fn new(w_aa: f64, w_ca: f64, w_cc: f64, w_coh: f64) -> Self {
        Self { w_aa, w_ca, w_cc, w_coh }
    }

    pub fn equal() -> Self {
        Self::new(0.25, 0.25, 0.25, 0.25)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_aa, self.w_ca, self.w_cc, self.w_coh]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Scales onto the simplex. Rejects negative, non-finite or all-zero
    /// vectors.
    pub fn normalized(&self) -> Result<Self, String> {
        let a = self.as_array();
        if a.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(format!("weights must be finite and non-negative, got {a:?}"));
        }
        let total = self.sum();
        if total <= 0.0 {
            return Err("weights must not all be zero".into());
        }
        Ok(Self::new(a[0] / total, a[1] / total, a[2] / total, a[3] / total))
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.w_aa, self.w_ca, self.w_cc, self.w_coh)
    }
}

impl FromStr for WeightVector {
    type Err = String;

    /// Parses `w_aa,w_ca,w_cc,w_coh`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{}`: {e}", p.trim())))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [a, b, c, d] => Ok(Self::new(*a, *b, *c, *d)),
            _ => Err(format!("expected 4 comma-separated weights, got {}", parts.len())),
        }
    }
}

pub fn weighted_score(c: &ComponentScores, w: &WeightVector, mode: OutputMode) -> f64 {
    c.masked(mode)
        .as_array()
        .iter()
        .zip(w.as_array())
        .map(|(s, w)| s * w)
        .sum()
}

/// Result of the exhaustive weight search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub weights: WeightVector,
    /// Winning grid point in units of 1/20.
    pub grid_point: [u32; 4],
    pub train_auroc: f64,
    pub evaluations: usize,
}

/// Searches every weight tuple on the 0.05 grid over `[0, 1]^4` for the
/// highest training AUROC. Ties go to the lexicographically smallest tuple.
/// The all-zero tuple is evaluated but never selected. The winner is normalized onto the simplex.
///
/// Components should already be masked for their output mode.
pub fn optimize_weights(train: &[(ComponentScores, bool)]) -> Result<GridSearchOutcome, MetricsError> {
    let labels: Vec<bool> = train.iter().map(|(_, l)| *l).collect();
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(MetricsError::DegenerateLabels);
    }
    let comps: Vec<[f64; 4]> = train.iter().map(|(c, _)| c.as_array()).collect();
    let mut scores = vec![0.0; comps.len()];
    let mut best: Option<([u32; 4], f64)> = None;
    let mut evaluations = 0usize;
    for a in 0..=GRID_STEPS {
        for b in 0..=GRID_STEPS {
            for c in 0..=GRID_STEPS {
                for d in 0..=GRID_STEPS {
                    let w = [a, b, c, d].map(|k| f64::from(k) / f64::from(GRID_STEPS));
                    for (s, x) in scores.iter_mut().zip(&comps) {
                        *s = x[0] * w[0] + x[1] * w[1] + x[2] * w[2] + x[3] * w[3];
                    }
                    let score = auroc(&scores, &labels)?;
                    evaluations += 1;
                    if a + b + c + d == 0 {
                        continue;
                    }
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some(([a, b, c, d], score));
                    }
                }
            }
        }
    }
    let (grid_point, train_auroc) = best.expect("grid has non-zero points");
    let total: u32 = grid_point.iter().sum();
    let [a, b, c, d] = grid_point.map(|k| f64::from(k) / f64::from(total));
    Ok(GridSearchOutcome {
        weights: WeightVector::new(a, b, c, d),
        grid_point,
        train_auroc,
        evaluations,
    })
}

/// Length-normalized entropy of the main generation's own tokens.
pub fn baseline_lnpe_main(main: &ModelOutput) -> Result<f64, ScoringError> {
    match &main.token_logprobs {
        Some(lps) => lnpe(&lps.iter().map(|t| t.logprob).collect::<Vec<_>>()),
        None => Err(ScoringError::Unavailable(Capability::Logprobs)),
    }
}

/// One minus the mean pairwise cosine similarity.
///
/// # Panics
///
/// With fewer than two vectors.
pub fn baseline_seu(vectors: &[EmbeddingVector]) -> f64 {
    assert!(vectors.len() >= 2, "SEU needs at least two answers");
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            total += vectors[i].cosine(&vectors[j]);
            pairs += 1;
        }
    }
    1.0 - total / pairs as f64
}

/// Mean normalized contradiction of the main answer (hypothesis) given each
/// sampled answer (premise).
pub fn baseline_scg_nli(gw: &GatewayClient, main_answer: &str, sampled: &[&str]) -> Result<f64, ScoringError> {
    if sampled.is_empty() {
        return Err(ScoringError::NoSamples);
    }
    let mut total = 0.0;
    for premise in sampled {
        total += gw.nli_probabilities(premise, main_answer)?.contradiction_score();
    }
    Ok(total / sampled.len() as f64)
}

/// Reasoning consistency over raw blank-line segments with uniform step
/// weights, skipping extraction entirely.
pub fn baseline_s_rr(gw: &GatewayClient, set: &SampleSet) -> Result<f64, ScoringError> {
    let main = fallback_segments(set.main.reasoning_source()).map_err(|_| ScoringError::EmptyReasoning)?;
    let samples: Vec<_> = set
        .samples
        .iter()
        .filter_map(|s| fallback_segments(s.reasoning_source()).ok())
        .collect();
    s_cc(gw, &main, &StepWeights::uniform(main.len()), &samples)
}

/// RACE computed on raw reasoning: `(S_AA, S_RA, S_RR, S_Coh)` under the
/// same mode rule as [`race_score`].
pub fn baseline_race_raw(raw: &ComponentScores, mode: OutputMode) -> f64 {
    race_score(raw, mode)
}
