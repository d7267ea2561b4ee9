//! Chain-of-thought extraction: prompt construction, the backend call and
//! parsing of its `[STEP]`-marked reply, plus the blank-line segmentation
//! used when no usable extraction comes back.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ExtractionRequest, GatewayClient, GatewayError};
use crate::model::{parse_extractor_output, ChainOfThought, ModelOutput, QueryRecord, StepSource};

pub const PLACEHOLDER_QUESTION: &str = "{question}";
pub const PLACEHOLDER_THOUGHT: &str = "{thought}";
pub const PLACEHOLDER_ANSWER: &str = "{answer}";

pub const DEFAULT_SYSTEM_PROMPT: &str = r#"You are responsible for extracting the main steps of the CoT (Chain of Thought). For the user's input question, thought process, and final answer, extract the steps in the thought process that lead to the final answer, ignoring irrelevant exploration or backtracking steps, merging the same step, and separating adjacent reasoning steps with [STEP].
Your output should only contain the extracted CoT and must be faithful to the user's input, even if the thought process contains errors. Minimize the number of inference steps and keep each step concise.

Example:

## Question

Were Scott Derrickson and Ed Wood of the same nationality?"

## Thought

Okay, so the user is asking if Scott Derrickson and Ed Wood are from the same country. I remember Scott Derrickson is an American director, known for horror movies like "Sinister." Ed Wood, on the other hand, I think is also American, but I'm not 100% sure. Maybe I should double-check that. I recall that Ed Wood was a filmmaker in the 50s and 60s, known for low-budget movies, so he's probably from the US. Yeah, I think both are American. So, the answer is yes, they're both from the same nationality, which is American.

## Final Answer

Yes, both Scott Derrickson and Ed Wood were American nationals.

## Output

[STEP] Scott Derrickson is an American director, known for horror movies like "Sinister."

[STEP] Ed Wood was a filmmaker in the 50s and 60s, known for low-budget movies, and is likely from the US.

[STEP] Both Scott Derrickson and Ed Wood are American.

[STEP] So the answer is: yes, Scott Derrickson and Ed Wood are of the same nationality."#;

pub const DEFAULT_USER_FORMAT: &str =
    "## Question\n\n{question}\n\n## Thought\n\n{thought}\n\n## Final Answer\n\n{answer}\n\n## Output\n\n";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("extraction template is missing the {0} placeholder")]
    Template(&'static str),
    #[error("cannot read extraction template: {0}")]
    TemplateFile(String),
    #[error("reasoning text has no non-empty segment")]
    EmptyReasoning,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPromptTemplate {
    pub system_text: String,
    pub user_format: String,
}

impl Default for ExtractionPromptTemplate {
    fn default() -> Self {
        Self {
            system_text: DEFAULT_SYSTEM_PROMPT.to_string(),
            user_format: DEFAULT_USER_FORMAT.to_string(),
        }
    }
}

impl ExtractionPromptTemplate {
    /// Loads a TOML file with `system_text` and `user_format` keys.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, ExtractionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExtractionError::TemplateFile(format!("{}: {e}", path.display())))?;
        let tmpl: Self = toml::from_str(&text)
            .map_err(|e| ExtractionError::TemplateFile(format!("{}: {e}", path.display())))?;
        tmpl.validate()?;
        Ok(tmpl)
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        for p in [PLACEHOLDER_QUESTION, PLACEHOLDER_THOUGHT, PLACEHOLDER_ANSWER] {
            if !self.user_format.contains(p) {
                return Err(ExtractionError::Template(p));
            }
        }
        Ok(())
    }
}

/// Substitutes question, reasoning and answer into the user format.
///
/// Substitution is a single left-to-right pass, so placeholder-looking text
/// inside the inputs is left alone. Nothing is truncated.
pub fn build_extraction_prompt(
    tmpl: &ExtractionPromptTemplate,
    question: &str,
    reasoning: &str,
    answer: &str,
) -> Result<String, ExtractionError> {
    tmpl.validate()?;
    Ok(fill_slots(
        &tmpl.user_format,
        &[
            (PLACEHOLDER_QUESTION, question),
            (PLACEHOLDER_THOUGHT, reasoning),
            (PLACEHOLDER_ANSWER, answer),
        ],
    ))
}

/// Replaces `{name}` placeholders in one left-to-right pass; unknown braces
/// are copied through.
pub(crate) fn fill_slots(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match slots.iter().find(|(p, _)| tail.starts_with(p)) {
            Some((p, value)) => {
                out.push_str(value);
                rest = &tail[p.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Splits raw reasoning on blank lines.
pub fn fallback_segments(reasoning: &str) -> Result<ChainOfThought, ExtractionError> {
    let steps: Vec<String> = reasoning
        .split("\n\n")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if steps.is_empty() {
        return Err(ExtractionError::EmptyReasoning);
    }
    Ok(ChainOfThought {
        steps,
        source: StepSource::RawSegmented,
        answer_hint: None,
    })
}

/// Distills the reasoning of one output into steps.
#[derive(Debug, Clone)]
pub struct CotExtractor {
    gateway: GatewayClient,
    template: ExtractionPromptTemplate,
}

impl CotExtractor {
    pub fn new(gateway: GatewayClient, template: ExtractionPromptTemplate) -> Result<Self, ExtractionError> {
        template.validate()?;
        Ok(Self { gateway, template })
    }

    pub fn template(&self) -> &ExtractionPromptTemplate {
        &self.template
    }

    /// Extraction runs in every output mode. An unmarked reply falls back
    /// to blank-line segmentation of the reasoning, flagged as
    /// [`StepSource::RawSegmented`].
    pub fn extract_cot(&self, record: &QueryRecord, output: &ModelOutput) -> Result<ChainOfThought, ExtractionError> {
        let reasoning = output.reasoning_source();
        if reasoning.trim().is_empty() {
            return Err(ExtractionError::EmptyReasoning);
        }
        let user_prompt = build_extraction_prompt(&self.template, &record.question, reasoning, &output.answer)?;
        let req = ExtractionRequest {
            question: record.question.clone(),
            reasoning: reasoning.to_string(),
            answer: output.answer.clone(),
            system_prompt: self.template.system_text.clone(),
            user_prompt,
        };
        let raw = self.gateway.extract_cot_raw(&req)?;
        match parse_extractor_output(&raw) {
            Ok(cot) => Ok(cot),
            Err(_) => {
                tracing::debug!(id = %record.id, "extraction reply had no [STEP] markers; segmenting raw reasoning");
                fallback_segments(reasoning)
            }
        }
    }
}
