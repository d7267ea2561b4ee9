use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::fill_slots;
use crate::gateway::{Capability, GatewayClient, GatewayError, GenerationConfig};

pub const JUDGE_PROMPT: &str = "I will provide a question, ground truth, and an answer. You need to determine whether the answer is correct. Choose the most appropriate option from the following:

A. Correct: The answer is semantically equivalent to the ground truth.

B. Incorrect: The answer addresses the question but is not semantically equivalent to any of the ground truths.

C. Irrelevant: The answer is unrelated to the question or does not provide a valid response.

Question: {question}

Ground Truth: {ground_truth}

Answer: {answer}

Your choice:";

pub const GOLD_SEPARATOR: &str = "; ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeChoice {
    A,
    B,
    C,
}

impl JudgeChoice {
    pub const ALL: [JudgeChoice; 3] = [JudgeChoice::A, JudgeChoice::B, JudgeChoice::C];

    pub fn letter(self) -> &'static str {
        match self {
            JudgeChoice::A => "A",
            JudgeChoice::B => "B",
            JudgeChoice::C => "C",
        }
    }

    /// Anything but "correct" counts as a hallucination.
    pub fn is_hallucination(self) -> bool {
        self != JudgeChoice::A
    }
}

impl fmt::Display for JudgeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for JudgeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_choice(s).ok_or_else(|| format!("no choice letter in `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    #[error("judge needs at least one gold answer")]
    NoGoldAnswers,
    #[error("judge reply `{0}` does not name an option")]
    JudgeUnparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub choice: JudgeChoice,
    pub hallucinated: bool,
    /// First-token log-probabilities of A, B, C when they were available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<[f64; 3]>,
}

pub fn render_judge_prompt(question: &str, gold_answers: &[String], answer: &str) -> String {
    let gold = gold_answers.join(GOLD_SEPARATOR);
    fill_slots(
        JUDGE_PROMPT,
        &[("{question}", question), ("{ground_truth}", &gold), ("{answer}", answer)],
    )
}

/// First option letter at the start of a reply such as `"C. Irrelevant"`
/// or `"(B)"`.
pub fn parse_choice(reply: &str) -> Option<JudgeChoice> {
    let t = reply.trim_start().trim_start_matches(['(', '[', '*', '"', '\'']);
    let letter = t.chars().next()?;
    let rest = &t[letter.len_utf8()..];
    if rest.chars().next().is_some_and(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    match letter {
        'A' => Some(JudgeChoice::A),
        'B' => Some(JudgeChoice::B),
        'C' => Some(JudgeChoice::C),
        _ => None,
    }
}

/// Picks the option with the highest first-token probability, or parses a
/// generated reply when the judge backend cannot score forced tokens.
pub fn judge_label(
    gw: &GatewayClient,
    question: &str,
    gold_answers: &[String],
    main_answer: &str,
) -> Result<JudgeVerdict, JudgeError> {
    if gold_answers.iter().all(|g| g.trim().is_empty()) {
        return Err(JudgeError::NoGoldAnswers);
    }
    let prompt = render_judge_prompt(question, gold_answers, main_answer);
    match choice_logprobs(gw, &prompt) {
        Ok(lps) => {
            // Strict comparison keeps the earliest letter on ties.
            let mut best = 0;
            for i in 1..3 {
                if lps[i] > lps[best] {
                    best = i;
                }
            }
            let choice = JudgeChoice::ALL[best];
            Ok(JudgeVerdict {
                choice,
                hallucinated: choice.is_hallucination(),
                logprobs: Some(lps),
            })
        }
        Err(GatewayError::CapabilityMissing(Capability::ForcedLogprobs)) => {
            let reply = gw
                .generate(&prompt, &GenerationConfig::greedy(8))?
                .into_iter()
                .next()
                .map(|c| c.text)
                .unwrap_or_default();
            let choice = parse_choice(&reply).ok_or(JudgeError::JudgeUnparseable(reply))?;
            Ok(JudgeVerdict {
                choice,
                hallucinated: choice.is_hallucination(),
                logprobs: None,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn choice_logprobs(gw: &GatewayClient, prompt: &str) -> Result<[f64; 3], GatewayError> {
    let mut out = [0.0; 3];
    for (slot, choice) in out.iter_mut().zip(JudgeChoice::ALL) {
        *slot = gw.forced_logprobs(prompt, choice.letter())?.logprobs[0];
    }
    Ok(out)
}
