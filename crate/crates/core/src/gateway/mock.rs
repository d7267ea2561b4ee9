//! Deterministic in-process backend.
//!
//! Lookups go to a [`MockTable`] first (first matching rule wins); anything
//! the table does not cover is answered by fixed synthetic rules, so a mock
//! run is reproducible given its table and seed. The synthetic generator
//! simulates a model that knows the answers listed in the table's
//! `knowledge` section with a per-question confidence: confident questions
//! produce consistent traces, unconfident ones waver between distractors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ner::rule_based_entities;
use super::{
    AttentionRequest, Backend, Capability, Completion, Decoding, ExtractionRequest, ForcedLogprobs,
    GatewayError, GenerationConfig, NliVerdict,
};
use crate::model::{normalize_entity, TokenLogprob};

const EMBED_DIM: usize = 64;
const JUDGE_MARKER: &str = "Your choice:";
const COT_PROMPT_MARKER: &str = "Thought: ...";
const NEGATIONS: &[&str] = &["not", "no", "never", "isn't", "wasn't", "didn't", "doesn't", "cannot"];
const DISTRACTORS: &[&str] = &[
    "Lyon",
    "Vienna",
    "1923",
    "Margaret Hale",
    "the Danube",
    "Osaka",
    "1871",
    "Thomas Reed",
    "Cape Town",
    "1956",
];

/// Output layout produced by the synthetic generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockStyle {
    #[default]
    Lrm,
    Cot,
    Direct,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateRule {
    pub prompt_contains: String,
    pub main: String,
    pub samples: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub main_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NliRule {
    pub premise_contains: String,
    pub hypothesis_contains: String,
    /// `[entailment, neutral, contradiction]`.
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcedRule {
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionRule {
    pub answer_contains: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractRule {
    pub reasoning_contains: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fact {
    pub question: String,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockTable {
    /// Advertised capabilities; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<Capability>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<MockStyle>,
    pub generate: Vec<GenerateRule>,
    pub embed: BTreeMap<String, Vec<f64>>,
    pub nli: Vec<NliRule>,
    pub forced: Vec<ForcedRule>,
    pub attention: Vec<AttentionRule>,
    pub ner: BTreeMap<String, Vec<String>>,
    pub extract: Vec<ExtractRule>,
    pub knowledge: Vec<Fact>,
}

impl MockTable {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn add_generation(&mut self, prompt_contains: &str, main: &str, samples: &[&str]) {
        self.generate.push(GenerateRule {
            prompt_contains: prompt_contains.to_string(),
            main: main.to_string(),
            samples: samples.iter().map(|s| s.to_string()).collect(),
            main_logprobs: None,
        });
    }

    pub fn add_forced(&mut self, target: &str, prompt_contains: Option<&str>, logprobs: &[f64]) {
        self.forced.push(ForcedRule {
            target: target.to_string(),
            prompt_contains: prompt_contains.map(str::to_string),
            logprobs: logprobs.to_vec(),
        });
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    table: MockTable,
    seed: u64,
    style: MockStyle,
    disabled: BTreeSet<Capability>,
}

impl MockBackend {
    pub fn synthetic(seed: u64) -> Self {
        Self::from_table(MockTable::default(), seed)
    }

    pub fn from_table(table: MockTable, seed: u64) -> Self {
        let style = table.style.unwrap_or_default();
        Self {
            table,
            seed,
            style,
            disabled: BTreeSet::new(),
        }
    }

    pub fn with_style(mut self, style: MockStyle) -> Self {
        self.style = style;
        self
    }

    pub fn without(mut self, cap: Capability) -> Self {
        self.disabled.insert(cap);
        self
    }

    /// Adds facts the synthetic generator "knows", skipping questions the
    /// table already covers.
    pub fn with_knowledge<I, Q, A>(mut self, facts: I) -> Self
    where
        I: IntoIterator<Item = (Q, A)>,
        Q: Into<String>,
        A: Into<String>,
    {
        for (q, a) in facts {
            let question = q.into();
            if !self.table.knowledge.iter().any(|f| f.question == question) {
                self.table.knowledge.push(Fact {
                    question,
                    answer: a.into(),
                    confidence: None,
                });
            }
        }
        self
    }

    pub fn table(&self) -> &MockTable {
        &self.table
    }

    fn has(&self, cap: Capability) -> bool {
        if self.disabled.contains(&cap) {
            return false;
        }
        match &self.table.capabilities {
            Some(caps) => caps.contains(&cap),
            None => true,
        }
    }

    fn require(&self, cap: Capability) -> Result<(), GatewayError> {
        if self.has(cap) {
            Ok(())
        } else {
            Err(GatewayError::CapabilityMissing(cap))
        }
    }

    fn synthetic_generation(&self, prompt: &str, cfg: &GenerationConfig) -> Vec<Completion> {
        let fact = self
            .table
            .knowledge
            .iter()
            .filter(|f| !f.question.is_empty() && prompt.contains(&f.question))
            .max_by_key(|f| f.question.len());
        let question = fact.map(|f| f.question.as_str()).unwrap_or(prompt).trim();
        let qhash = fnv1a(question.as_bytes());
        let gold = fact
            .map(|f| f.answer.clone())
            .unwrap_or_else(|| DISTRACTORS[(qhash % DISTRACTORS.len() as u64) as usize].to_string());
        let confidence = fact
            .and_then(|f| f.confidence)
            .unwrap_or_else(|| 0.2 + 0.8 * ((mix(self.seed ^ qhash) % 1000) as f64 / 1000.0));
        let style = if prompt.contains(COT_PROMPT_MARKER) {
            MockStyle::Cot
        } else {
            self.style
        };

        (0..cfg.n)
            .map(|k| {
                let stream = match cfg.decoding {
                    Decoding::Greedy => 0,
                    Decoding::Sample => u64::from(k) + 1,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ qhash ^ mix(stream)));
                let knows = match cfg.decoding {
                    Decoding::Greedy => confidence >= 0.5,
                    Decoding::Sample => rng.gen::<f64>() < confidence,
                };
                let (steps, answer) = synthetic_trace(question, &gold, knows, &mut rng);
                let text = match style {
                    MockStyle::Lrm => format!("<think>\n{}\n</think>\n\n{answer}", steps.join("\n\n")),
                    MockStyle::Cot => format!("Thought: {}\nAnswer: {answer}", steps.join(" ")),
                    MockStyle::Direct => answer.clone(),
                };
                let logprobs = cfg.return_logprobs.then(|| {
                    text.split_whitespace()
                        .map(|tok| {
                            let u: f64 = rng.gen();
                            let logprob = if knows { -0.05 - 0.15 * u } else { -0.6 - 0.9 * u };
                            TokenLogprob {
                                token: tok.to_string(),
                                logprob,
                            }
                        })
                        .collect()
                });
                Completion { text, logprobs }
            })
            .collect()
    }
}

fn synthetic_trace(question: &str, gold: &str, knows: bool, rng: &mut ChaCha8Rng) -> (Vec<String>, String) {
    let opening = format!("The question asks: {question}");
    if knows {
        return (
            vec![
                opening,
                format!("I recall that the answer is {gold}."),
                format!("So the final answer is {gold}."),
            ],
            gold.to_string(),
        );
    }
    let first = DISTRACTORS[rng.gen_range(0..DISTRACTORS.len())];
    let mut second = DISTRACTORS[rng.gen_range(0..DISTRACTORS.len())];
    if second == first {
        second = gold;
    }
    let answer = if rng.gen_bool(0.5) { first } else { second };
    (
        vec![
            opening,
            format!("Maybe the answer is {first}."),
            format!("Wait, it could also be {second}."),
            format!("I will go with {answer}."),
        ],
        answer.to_string(),
    )
}

impl Backend for MockBackend {
    fn capabilities(&self) -> Result<Vec<Capability>, GatewayError> {
        Ok(Capability::ALL.into_iter().filter(|c| self.has(*c)).collect())
    }

    fn generate(&self, prompt: &str, cfg: &GenerationConfig) -> Result<Vec<Completion>, GatewayError> {
        self.require(Capability::Generate)?;
        if cfg.return_logprobs {
            self.require(Capability::Logprobs)?;
        }
        let rule = self
            .table
            .generate
            .iter()
            .find(|r| prompt.contains(&r.prompt_contains));
        let Some(rule) = rule else {
            return Ok(self.synthetic_generation(prompt, cfg));
        };
        let texts: Vec<&str> = match cfg.decoding {
            Decoding::Greedy => vec![rule.main.as_str()],
            Decoding::Sample => {
                let pool: Vec<&str> = if rule.samples.is_empty() {
                    vec![rule.main.as_str()]
                } else {
                    rule.samples.iter().map(String::as_str).collect()
                };
                (0..cfg.n as usize).map(|k| pool[k % pool.len()]).collect()
            }
        };
        Ok(texts
            .into_iter()
            .map(|text| {
                let logprobs = cfg.return_logprobs.then(|| {
                    let tokens: Vec<&str> = text.split_whitespace().collect();
                    tokens
                        .iter()
                        .enumerate()
                        .map(|(i, tok)| TokenLogprob {
                            token: tok.to_string(),
                            logprob: rule
                                .main_logprobs
                                .as_ref()
                                .and_then(|lps| lps.get(i).copied())
                                .unwrap_or(-0.3),
                        })
                        .collect()
                });
                Completion {
                    text: text.to_string(),
                    logprobs,
                }
            })
            .collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.require(Capability::Embed)?;
        Ok(texts
            .iter()
            .map(|t| self.table.embed.get(t).cloned().unwrap_or_else(|| hashed_embedding(t)))
            .collect())
    }

    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
        self.require(Capability::Nli)?;
        if let Some(rule) = self
            .table
            .nli
            .iter()
            .find(|r| premise.contains(&r.premise_contains) && hypothesis.contains(&r.hypothesis_contains))
        {
            let [e, n, c] = rule.probs;
            return Ok(NliVerdict::new(e, n, c));
        }
        Ok(heuristic_nli(premise, hypothesis))
    }

    fn forced_logprobs(&self, prompt: &str, target: &str) -> Result<ForcedLogprobs, GatewayError> {
        self.require(Capability::ForcedLogprobs)?;
        if let Some(rule) = self.table.forced.iter().find(|r| {
            r.target == target && r.prompt_contains.as_deref().is_none_or(|p| prompt.contains(p))
        }) {
            let tokens = split_tokens(target, rule.logprobs.len());
            return Ok(ForcedLogprobs {
                tokens,
                logprobs: rule.logprobs.clone(),
                entropies: None,
            });
        }
        if prompt.contains(JUDGE_MARKER) && matches!(target.trim(), "A" | "B" | "C") {
            let choice = judge_rule(prompt);
            let p = if target.trim() == choice { 0.9 } else { 0.05 };
            return Ok(ForcedLogprobs {
                tokens: vec![target.to_string()],
                logprobs: vec![f64::ln(p)],
                entropies: None,
            });
        }
        let context: BTreeSet<String> = words(prompt).into_iter().collect();
        let tokens: Vec<String> = match target.split_whitespace().collect::<Vec<_>>() {
            v if v.is_empty() => vec![target.to_string()],
            v => v.into_iter().map(str::to_string).collect(),
        };
        let logprobs = tokens
            .iter()
            .map(|tok| {
                let seen = words(tok).iter().all(|w| context.contains(w));
                if seen {
                    -0.05
                } else {
                    -2.0
                }
            })
            .collect();
        Ok(ForcedLogprobs {
            tokens,
            logprobs,
            entropies: None,
        })
    }

    fn attention(&self, req: &AttentionRequest) -> Result<Vec<f64>, GatewayError> {
        self.require(Capability::Attention)?;
        if let Some(rule) = self
            .table
            .attention
            .iter()
            .find(|r| req.answer.contains(&r.answer_contains) && r.scores.len() == req.steps.len())
        {
            return Ok(rule.scores.clone());
        }
        let answer: BTreeSet<String> = words(&req.answer).into_iter().collect();
        Ok(req
            .steps
            .iter()
            .map(|step| {
                let w = words(step);
                let overlap = w.iter().filter(|t| answer.contains(*t)).count();
                (1 + overlap) as f64 / (1 + w.len()) as f64
            })
            .collect())
    }

    fn ner(&self, text: &str) -> Result<Vec<String>, GatewayError> {
        self.require(Capability::Ner)?;
        Ok(self
            .table
            .ner
            .get(text)
            .cloned()
            .unwrap_or_else(|| rule_based_entities(text)))
    }

    fn extract(&self, req: &ExtractionRequest) -> Result<String, GatewayError> {
        self.require(Capability::Extract)?;
        if let Some(rule) = self
            .table
            .extract
            .iter()
            .find(|r| req.reasoning.contains(&r.reasoning_contains))
        {
            return Ok(rule.text.clone());
        }
        Ok(heuristic_extraction(&req.reasoning, &req.answer))
    }
}

fn split_tokens(target: &str, n: usize) -> Vec<String> {
    let words: Vec<&str> = target.split_whitespace().collect();
    if words.len() == n {
        words.into_iter().map(str::to_string).collect()
    } else {
        (0..n).map(|i| format!("<t{i}>")).collect()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn content_words(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| w.len() >= 3 && !NEGATIONS.contains(&w.as_str()))
        .collect()
}

fn is_negated(text: &str) -> bool {
    words(text).iter().any(|w| NEGATIONS.contains(&w.as_str()))
}

/// Overlap-driven NLI stand-in: containment entails, a flipped negation
/// contradicts, and hypothesis entities missing from the premise push mass
/// towards contradiction.
fn heuristic_nli(premise: &str, hypothesis: &str) -> NliVerdict {
    let p = words(premise).join(" ");
    let h = words(hypothesis).join(" ");
    if p == h || (!h.is_empty() && format!(" {p} ").contains(&format!(" {h} "))) {
        return NliVerdict::entailment();
    }
    let premise_words: BTreeSet<String> = words(premise).into_iter().collect();
    let hyp_content = content_words(hypothesis);
    let coverage = if hyp_content.is_empty() {
        0.5
    } else {
        hyp_content.iter().filter(|w| premise_words.contains(*w)).count() as f64 / hyp_content.len() as f64
    };
    if is_negated(premise) != is_negated(hypothesis) && coverage >= 0.5 {
        return NliVerdict::contradiction();
    }
    let entities: Vec<String> = rule_based_entities(hypothesis)
        .iter()
        .map(|e| normalize_entity(e))
        .collect();
    let premise_lower = format!(" {p} ");
    let missing = if entities.is_empty() {
        0.0
    } else {
        entities
            .iter()
            .filter(|e| !premise_lower.contains(&format!(" {} ", words(e).join(" "))))
            .count() as f64
            / entities.len() as f64
    };
    let contradict = 0.85 * missing;
    let entail = (1.0 - missing) * coverage * 0.9;
    NliVerdict::new(entail, 1.0 - entail - contradict, contradict)
}

fn heuristic_extraction(reasoning: &str, answer: &str) -> String {
    let mut segments: Vec<&str> = reasoning
        .split("\n\n")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if segments.len() == 1 {
        segments = segments[0]
            .split_inclusive(". ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
    }
    let answer_words: BTreeSet<String> = content_words(answer).into_iter().collect();
    let last = segments.len().saturating_sub(1);
    let mut kept: Vec<&str> = segments
        .iter()
        .enumerate()
        .filter(|(i, s)| *i == last || content_words(s).iter().any(|w| answer_words.contains(w)))
        .map(|(_, s)| *s)
        .collect();
    if kept.is_empty() {
        kept = segments;
    }
    let mut out: String = kept.iter().map(|s| format!("[STEP] {s}\n")).collect();
    out.push_str(&format!("[ANSWER] {}", answer.trim()));
    out
}

/// Letter the mock judge picks for a rendered judge prompt.
fn judge_rule(prompt: &str) -> &'static str {
    let field = |label: &str| {
        prompt
            .lines()
            .rev()
            .find_map(|l| l.trim().strip_prefix(label).map(str::trim))
            .unwrap_or("")
    };
    let answer = words(field("Answer:")).join(" ");
    if answer.is_empty() {
        return "C";
    }
    let padded = format!(" {answer} ");
    let correct = field("Ground Truth:")
        .split("; ")
        .map(|g| words(g).join(" "))
        .filter(|g| !g.is_empty())
        .any(|g| padded.contains(&format!(" {g} ")) || format!(" {g} ").contains(&padded));
    if correct {
        "A"
    } else {
        "B"
    }
}

fn hashed_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    let toks = words(text);
    if toks.is_empty() {
        v[0] = 1.0;
        return v;
    }
    for tok in toks {
        let h = fnv1a(tok.as_bytes());
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v.iter().map(|x| x / norm).collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
