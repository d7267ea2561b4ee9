//! Domain types and deterministic parsers that split raw generations into
//! reasoning and answer text.
//!
//! Three output layouts are supported:
//!
//! * [`OutputMode::Lrm`]: reasoning models that wrap their trace in think
//!   tags (`<think> ... </think> answer`).
//! * [`OutputMode::CotPrompt`]: instruction models prompted to answer with a
//!   `Thought: ... Answer: ...` template.
//! * [`OutputMode::Direct`]: plain answers, where the whole output doubles
//!   as reasoning and answer.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THINK_OPEN: &str = "<think>";
pub const DEFAULT_THINK_CLOSE: &str = "</think>";
pub const STEP_MARKER: &str = "[STEP]";
pub const ANSWER_MARKER: &str = "[ANSWER]";

const THOUGHT_LABEL: &str = "Thought:";
const ANSWER_LABEL: &str = "Answer:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("generation has no closing think tag `{0}`")]
    MissingThinkClose(String),
    #[error("generation has no `Answer:` marker")]
    MissingAnswerMarker,
    #[error("generation is empty")]
    EmptyOutput,
    #[error("extraction output contains no non-empty [STEP] span")]
    NoStepsFound,
}

/// One question from an evaluation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, rename = "answers")]
    pub gold_answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Reasoning model with a think span.
    Lrm,
    /// Standard model prompted for step-by-step reasoning.
    #[serde(rename = "cot")]
    CotPrompt,
    /// Standard model answering directly.
    Direct,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::Lrm => "lrm",
            OutputMode::CotPrompt => "cot",
            OutputMode::Direct => "direct",
        }
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lrm" => Ok(OutputMode::Lrm),
            "cot" | "cot_prompt" => Ok(OutputMode::CotPrompt),
            "direct" => Ok(OutputMode::Direct),
            other => Err(format!("unknown output mode `{other}` (expected lrm, cot or direct)")),
        }
    }
}

/// A token with its log-probability in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// A single generation decomposed into reasoning and answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub raw_text: String,
    pub reasoning: String,
    pub answer: String,
    pub mode: OutputMode,
    pub is_main: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

impl ModelOutput {
    /// Reasoning text used for extraction and segmentation. An empty think
    /// span falls back to the answer, mirroring the direct-answer layout.
    pub fn reasoning_source(&self) -> &str {
        if self.reasoning.trim().is_empty() {
            &self.answer
        } else {
            &self.reasoning
        }
    }
}

/// The greedy output under test plus its sampled companions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub main: ModelOutput,
    pub samples: Vec<ModelOutput>,
}

impl SampleSet {
    pub fn new(main: ModelOutput, samples: Vec<ModelOutput>) -> Result<Self, String> {
        if samples.is_empty() {
            return Err("a sample set needs at least one sampled output".into());
        }
        if samples.iter().any(|s| s.mode != main.mode) {
            return Err("all outputs in a sample set must share one output mode".into());
        }
        Ok(Self { main, samples })
    }

    /// Main answer followed by the sampled answers, in generation order.
    pub fn answers(&self) -> Vec<&str> {
        std::iter::once(self.main.answer.as_str())
            .chain(self.samples.iter().map(|s| s.answer.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSource {
    Extracted,
    RawSegmented,
}

/// Ordered reasoning steps distilled from (or segmented out of) a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOfThought {
    pub steps: Vec<String>,
    pub source: StepSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_hint: Option<String>,
}

impl ChainOfThought {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn joined(&self, sep: &str) -> String {
        self.steps.join(sep)
    }
}

/// Think-tag literals for reasoning-model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkTags {
    pub open: String,
    pub close: String,
}

impl Default for ThinkTags {
    fn default() -> Self {
        Self {
            open: DEFAULT_THINK_OPEN.to_string(),
            close: DEFAULT_THINK_CLOSE.to_string(),
        }
    }
}

/// Splits a reasoning-model generation on the first closing think tag.
///
/// The opening tag is optional: some distilled models only emit the close tag.
pub fn parse_lrm_output(raw: &str) -> Result<ModelOutput, ParseError> {
    parse_lrm_output_with(raw, &ThinkTags::default())
}

pub fn parse_lrm_output_with(raw: &str, tags: &ThinkTags) -> Result<ModelOutput, ParseError> {
    let close_at = raw
        .find(&tags.close)
        .ok_or_else(|| ParseError::MissingThinkClose(tags.close.clone()))?;
    let head = &raw[..close_at];
    let tail = &raw[close_at + tags.close.len()..];
    let reasoning = match head.find(&tags.open) {
        Some(open_at) => &head[open_at + tags.open.len()..],
        None => head,
    };
    Ok(ModelOutput {
        raw_text: raw.to_string(),
        reasoning: reasoning.trim().to_string(),
        answer: tail.trim().to_string(),
        mode: OutputMode::Lrm,
        is_main: true,
        token_logprobs: None,
    })
}

/// Splits a `Thought: ... Answer: ...` generation. The answer is taken after
/// the last `Answer:` marker, so drafts the model revised are ignored.
pub fn parse_cot_prompt_output(raw: &str) -> Result<ModelOutput, ParseError> {
    let answer_at = raw.rfind(ANSWER_LABEL).ok_or(ParseError::MissingAnswerMarker)?;
    let answer = raw[answer_at + ANSWER_LABEL.len()..].trim();
    let thought_start = raw.find(THOUGHT_LABEL).map(|i| i + THOUGHT_LABEL.len()).unwrap_or(0);
    let first_answer = raw.find(ANSWER_LABEL).unwrap_or(answer_at);
    let reasoning = if thought_start <= first_answer {
        raw[thought_start..first_answer].trim()
    } else {
        ""
    };
    Ok(ModelOutput {
        raw_text: raw.to_string(),
        reasoning: reasoning.to_string(),
        answer: answer.to_string(),
        mode: OutputMode::CotPrompt,
        is_main: true,
        token_logprobs: None,
    })
}

/// The whole (trimmed) output serves as both reasoning and answer.
pub fn parse_direct_output(raw: &str) -> Result<ModelOutput, ParseError> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(ParseError::EmptyOutput);
    }
    Ok(ModelOutput {
        raw_text: raw.to_string(),
        reasoning: text.to_string(),
        answer: text.to_string(),
        mode: OutputMode::Direct,
        is_main: true,
        token_logprobs: None,
    })
}

/// Parses a generation under `mode`.
///
/// Main outputs propagate parse failures so the caller can drop the record.
/// Sampled outputs that miss their closing marker are kept, with the full
/// text as reasoning and its last non-empty line as the answer.
pub fn parse_output(
    raw: &str,
    mode: OutputMode,
    is_main: bool,
    tags: &ThinkTags,
) -> Result<ModelOutput, ParseError> {
    let parsed = match mode {
        OutputMode::Lrm => parse_lrm_output_with(raw, tags),
        OutputMode::CotPrompt => parse_cot_prompt_output(raw),
        OutputMode::Direct => parse_direct_output(raw),
    };
    let mut out = match parsed {
        Ok(out) => out,
        Err(ParseError::MissingThinkClose(_) | ParseError::MissingAnswerMarker) if !is_main => {
            lenient_fallback(raw, mode, tags)?
        }
        Err(e) => return Err(e),
    };
    out.is_main = is_main;
    Ok(out)
}

fn lenient_fallback(raw: &str, mode: OutputMode, tags: &ThinkTags) -> Result<ModelOutput, ParseError> {
    let mut body = raw.trim();
    if mode == OutputMode::Lrm {
        body = body.strip_prefix(tags.open.as_str()).unwrap_or(body).trim();
    }
    if body.is_empty() {
        return Err(ParseError::EmptyOutput);
    }
    let answer = body
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or(body);
    Ok(ModelOutput {
        raw_text: raw.to_string(),
        reasoning: body.to_string(),
        answer: answer.to_string(),
        mode,
        is_main: false,
        token_logprobs: None,
    })
}

/// Parses `[STEP]`-marked extraction output into a chain of thought.
pub fn parse_extractor_output(raw: &str) -> Result<ChainOfThought, ParseError> {
    let (body, hint) = match raw.find(ANSWER_MARKER) {
        Some(at) => {
            let hint = raw[at + ANSWER_MARKER.len()..].trim();
            (&raw[..at], (!hint.is_empty()).then(|| hint.to_string()))
        }
        None => (raw, None),
    };
    if !body.contains(STEP_MARKER) {
        return Err(ParseError::NoStepsFound);
    }
    // Text before the first marker is preamble, not a step.
    let steps: Vec<String> = body
        .split(STEP_MARKER)
        .skip(1)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if steps.is_empty() {
        return Err(ParseError::NoStepsFound);
    }
    Ok(ChainOfThought {
        steps,
        source: StepSource::Extracted,
        answer_hint: hint,
    })
}

/// Case-folded, whitespace-collapsed entity strings with set semantics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub entities: BTreeSet<String>,
}

impl EntitySet {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entities.contains(entity)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }
}

pub fn normalize_entity(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn normalize_entities<I, S>(raw_entities: I) -> EntitySet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let entities = raw_entities
        .into_iter()
        .map(|e| normalize_entity(e.as_ref()))
        .filter(|e| !e.is_empty())
        .collect();
    EntitySet { entities }
}
