//! Property suite run under a seeded proptest runner.

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use race_core::aggregate::{race_score, ComponentScores, ScoreBundle, WeightVector};
use race_core::answer::{answer_uncertainty, similarity_matrix};
use race_core::gateway::EmbeddingVector;
use race_core::harness::store::ScoreRecord;
use race_core::harness::{parse_choice, parse_dataset, render_judge_prompt, JudgeChoice};
use race_core::metrics::{auroc, percentile_normalize, train_test_split_head};
use race_core::model::{
    normalize_entities, normalize_entity, parse_cot_prompt_output, parse_extractor_output, parse_lrm_output,
    parse_output, OutputMode, QueryRecord, ThinkTags,
};
use race_core::reasoning::{s_cc_from_deltas, s_coh, StepWeights};

pub const CASES: u32 = 512;

type Check = fn() -> Result<(), String>;

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn text(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[A-Za-z0-9 .,'\\n-]{{0,{max}}}")).unwrap()
}

fn nonblank(max: usize) -> impl Strategy<Value = String> {
    text(max).prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn lrm_round_trip() -> Result<(), String> {
    check((text(120), text(40), any::<bool>()), |(reasoning, answer, open)| {
        let raw = format!("{}{reasoning}</think>{answer}", if open { "<think>" } else { "" });
        let out = parse_lrm_output(&raw).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(out.reasoning, reasoning.trim());
        prop_assert_eq!(out.answer, answer.trim());
        prop_assert_eq!(out.raw_text, raw);
        Ok(())
    })
}

fn cot_round_trip() -> Result<(), String> {
    check((text(120), text(40), proptest::option::of(text(20))), |(thought, answer, draft)| {
        let raw = match &draft {
            Some(d) => format!("Thought: {thought}\nAnswer: {d}\nAnswer: {answer}"),
            None => format!("Thought: {thought}\nAnswer: {answer}"),
        };
        let out = parse_cot_prompt_output(&raw).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(out.reasoning, thought.trim());
        prop_assert_eq!(out.answer, answer.trim());
        Ok(())
    })
}

fn extractor_round_trip() -> Result<(), String> {
    check(
        (proptest::collection::vec(nonblank(60), 1..8), text(30)),
        |(steps, answer)| {
            let mut raw: String = steps.iter().map(|s| format!("[STEP] {s}\n\n")).collect();
            raw.push_str(&format!("[ANSWER] {answer}"));
            let cot = parse_extractor_output(&raw).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let want: Vec<&str> = steps.iter().map(|s| s.trim()).collect();
            prop_assert_eq!(cot.steps, want);
            let hint = (!answer.trim().is_empty()).then(|| answer.trim().to_string());
            prop_assert_eq!(cot.answer_hint, hint);
            Ok(())
        },
    )
}

fn unterminated_outputs() -> Result<(), String> {
    check(nonblank(120), |body| {
        let raw = format!("<think>{body}");
        let tags = ThinkTags::default();
        prop_assert!(parse_output(&raw, OutputMode::Lrm, true, &tags).is_err());
        let sample = parse_output(&raw, OutputMode::Lrm, false, &tags).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(!sample.is_main);
        prop_assert!(!sample.answer.is_empty());
        prop_assert!(body.contains(sample.answer.as_str()));
        Ok(())
    })
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(
        proptest::collection::vec(-1.0f64..1.0, 3).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3)),
        1..9,
    )
}

fn clustering_invariants() -> Result<(), String> {
    check((vectors(), 0.05f64..=1.0), |(raw, tau)| {
        let vs: Vec<EmbeddingVector> = raw.into_iter().map(EmbeddingVector::new).collect();
        let sims = similarity_matrix(&vs);
        let (score, cs) = answer_uncertainty(&vs, tau);
        let mut seen: Vec<usize> = cs.clusters.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..vs.len()).collect::<Vec<_>>());
        for c in &cs.clusters {
            prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
            for &a in c {
                for &b in c {
                    prop_assert!(sims[a][b] >= tau);
                }
            }
        }
        let firsts: Vec<usize> = cs.clusters.iter().map(|c| c[0]).collect();
        prop_assert!(firsts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!((cs.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (adj, p) in cs.adjusted.iter().zip(&cs.proportions) {
            prop_assert!(*adj >= 0.0 && *adj <= *p + 1e-15);
        }
        prop_assert!(score.is_finite() && score >= 0.0);
        prop_assert!(score <= cs.len() as f64 / std::f64::consts::E + 1e-12);
        Ok(())
    })
}

fn identical_answers_score_zero() -> Result<(), String> {
    check((proptest::collection::vec(-1.0f64..1.0, 4), 1usize..9), |(v, n)| {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let vs = vec![EmbeddingVector::new(v); n];
        let (score, cs) = answer_uncertainty(&vs, 0.9);
        prop_assert_eq!(cs.len(), 1);
        prop_assert!(score.abs() < 1e-12);
        Ok(())
    })
}

fn s_cc_bounds() -> Result<(), String> {
    let strat = (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec(0.0f64..10.0, m),
            proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, n), m),
            0..m,
            0..n,
        )
    });
    check(strat, |(raw, deltas, j, i)| {
        let w = StepWeights::from_raw(&raw);
        let s = s_cc_from_deltas(&w, &deltas);
        prop_assert!((0.0..=1.0).contains(&s));
        let mut raised = deltas.clone();
        raised[j][i] = 1.0;
        prop_assert!(s_cc_from_deltas(&w, &raised) >= s - 1e-12);
        Ok(())
    })
}

fn step_weights_normalize() -> Result<(), String> {
    let score = prop_oneof![Just(0.0), Just(f64::NAN), -10.0f64..0.0, 0.0f64..1e6];
    check(proptest::collection::vec(score, 1..16), |raw| {
        let w = StepWeights::from_raw(&raw);
        prop_assert_eq!(w.len(), raw.len());
        prop_assert!(w.weights.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((w.sum() - 1.0).abs() <= 1e-9);
        Ok(())
    })
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    proptest::collection::vec((0u8..20, any::<bool>()), 2..120)
        .prop_filter("two classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 4.0, l)).unzip())
}

fn auroc_symmetry() -> Result<(), String> {
    check(labeled_scores(), |(scores, labels)| {
        let a = auroc(&scores, &labels).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&neg, &labels).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let c = auroc(&scores, &flipped).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((a - b).abs() < 1e-12 || (b - c).abs() < 1e-12);
        prop_assert!((b - c).abs() < 1e-12);
        Ok(())
    })
}

fn percentile_monotone() -> Result<(), String> {
    check(proptest::collection::vec(-1e6f64..1e6, 1..100), |scores| {
        let p = percentile_normalize(&scores).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(p.iter().all(|x| *x > 0.0 && *x <= 1.0));
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] {
                    prop_assert!(p[i] < p[j]);
                } else if scores[i] == scores[j] {
                    prop_assert_eq!(p[i], p[j]);
                }
            }
        }
        let max = p.iter().cloned().fold(f64::MIN, f64::max);
        let ties = scores.iter().filter(|s| **s == scores.iter().cloned().fold(f64::MIN, f64::max)).count();
        if ties == 1 {
            prop_assert_eq!(max, 1.0);
        }
        Ok(())
    })
}

fn entity_names() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec("[A-Za-z]{1,6}( [A-Za-z]{1,6})?", 0..8)
}

fn coherence_bounds() -> Result<(), String> {
    check((entity_names(), entity_names()), |(r, c)| {
        let e_r = normalize_entities(&r);
        let e_c = normalize_entities(&c);
        let s = s_coh(&e_r, &e_c);
        prop_assert!((0.0..=1.0).contains(&s));
        let superset = normalize_entities(r.iter().chain(&c));
        prop_assert_eq!(s_coh(&e_r, &superset), 0.0);
        if e_r.is_empty() {
            prop_assert_eq!(s, 0.0);
        }
        Ok(())
    })
}

fn entity_normalization_idempotent() -> Result<(), String> {
    check("[A-Za-z \\t\\n]{0,40}", |raw| {
        let once = normalize_entity(&raw);
        prop_assert_eq!(normalize_entity(&once), once.clone());
        prop_assert_eq!(once.trim(), once.as_str());
        Ok(())
    })
}

fn components() -> impl Strategy<Value = ComponentScores> {
    (0.0f64..3.0, 0.0f64..5.0, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b, c, d)| ComponentScores::new(a, b, c, d))
}

fn race_masking() -> Result<(), String> {
    check(components(), |c| {
        let base = c.s_aa + c.s_ca + c.s_cc;
        prop_assert!((race_score(&c, OutputMode::Lrm) - (base + c.s_coh)).abs() < 1e-12);
        prop_assert!((race_score(&c, OutputMode::CotPrompt) - base).abs() < 1e-12);
        prop_assert!((race_score(&c, OutputMode::Direct) - base).abs() < 1e-12);
        Ok(())
    })
}

fn weight_vector_round_trip() -> Result<(), String> {
    check(proptest::array::uniform4(0.0f64..100.0), |w| {
        let v = WeightVector::new(w[0], w[1], w[2], w[3]);
        let back: WeightVector = v.to_string().parse().map_err(TestCaseError::fail)?;
        prop_assert_eq!(back, v);
        match v.normalized() {
            Ok(n) => {
                prop_assert!((n.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(n.as_array().iter().all(|x| *x >= 0.0));
            }
            Err(_) => prop_assert!(v.sum() == 0.0),
        }
        Ok(())
    })
}

fn score_record_round_trip() -> Result<(), String> {
    let strat = (
        "[a-z0-9]{1,8}",
        components(),
        prop_oneof![Just(OutputMode::Lrm), Just(OutputMode::CotPrompt), Just(OutputMode::Direct)],
        proptest::collection::btree_map("[a-z_]{1,8}", -1e9f64..1e9, 0..4),
        proptest::option::of(any::<bool>()),
    );
    check(strat, |(id, c, mode, baselines, label)| {
        let mut rec = ScoreRecord::skipped(id, mode, "x");
        rec.skipped = false;
        rec.reason = None;
        rec.main_answer = Some("answer".into());
        rec.scores = Some(ScoreBundle::new(c, mode, baselines.into_iter().collect::<BTreeMap<_, _>>()));
        rec.hallucinated = label;
        let line = serde_json::to_string(&rec).unwrap();
        let back: ScoreRecord = serde_json::from_str(&line).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), line);
        Ok(())
    })
}

fn dataset_round_trip() -> Result<(), String> {
    let record = (
        "[a-z0-9-]{1,10}",
        nonblank(60),
        proptest::option::of(text(60)),
        proptest::collection::vec(nonblank(20), 0..4),
    );
    check(proptest::collection::btree_map("[a-z0-9]{1,10}", record, 1..10), |recs| {
        let records: Vec<QueryRecord> = recs
            .into_iter()
            .map(|(id, (_, question, context, gold_answers))| QueryRecord {
                id,
                question,
                context,
                gold_answers,
            })
            .collect();
        let mut jsonl = String::new();
        for r in &records {
            jsonl.push_str(&serde_json::to_string(r).unwrap());
            jsonl.push_str("\n\n");
        }
        let back = parse_dataset(jsonl.as_bytes()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, records);
        Ok(())
    })
}

fn judge_prompt_and_choice() -> Result<(), String> {
    let strat = (
        nonblank(60),
        proptest::collection::vec(nonblank(20), 1..4),
        nonblank(30),
        0usize..3,
        "[ .):\\-]{0,1}[a-z ]{0,10}",
    );
    check(strat, |(q, gold, answer, k, suffix)| {
        let prompt = render_judge_prompt(&q, &gold, &answer);
        prop_assert!(prompt.contains(&q));
        prop_assert!(prompt.contains(&gold.join("; ")));
        prop_assert!(prompt.contains(&answer));
        prop_assert!(prompt.trim_end().ends_with("Your choice:"));
        let choice = JudgeChoice::ALL[k];
        let reply = format!("{}{suffix}", choice.letter());
        prop_assume!(!suffix.starts_with(|c: char| c.is_ascii_alphanumeric()));
        prop_assert_eq!(parse_choice(&reply), Some(choice));
        Ok(())
    })
}

fn head_split_sizes() -> Result<(), String> {
    check((2usize..500, 0.01f64..0.99), |(n, f)| {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = train_test_split_head(&items, f).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(!train.is_empty() && !test.is_empty());
        let expected = ((n as f64 * f + 1e-9).floor() as usize).clamp(1, n - 1);
        prop_assert_eq!(train.len(), expected);
        prop_assert_eq!(train.first(), Some(&0));
        Ok(())
    })
}

pub fn run_all() -> Result<String, String> {
    let start = std::time::Instant::now();
    let props: Vec<(&str, Check)> = vec![
        ("lrm_round_trip", lrm_round_trip),
        ("cot_round_trip", cot_round_trip),
        ("extractor_round_trip", extractor_round_trip),
        ("unterminated_outputs", unterminated_outputs),
        ("clustering_invariants", clustering_invariants),
        ("identical_answers_score_zero", identical_answers_score_zero),
        ("s_cc_bounds", s_cc_bounds),
        ("step_weights_normalize", step_weights_normalize),
        ("auroc_symmetry", auroc_symmetry),
        ("percentile_monotone", percentile_monotone),
        ("coherence_bounds", coherence_bounds),
        ("entity_normalization_idempotent", entity_normalization_idempotent),
        ("race_masking", race_masking),
        ("weight_vector_round_trip", weight_vector_round_trip),
        ("score_record_round_trip", score_record_round_trip),
        ("dataset_round_trip", dataset_round_trip),
        ("judge_prompt_and_choice", judge_prompt_and_choice),
        ("head_split_sizes", head_split_sizes),
    ];
    let count = props.len();
    for (name, prop) in props {
        prop().map_err(|e| format!("{name}: {e}"))?;
    }
    let elapsed = start.elapsed();
    if elapsed.as_secs() >= 60 {
        return Err(format!("took {elapsed:?}, budget 60s"));
    }
    Ok(format!("{count} properties x {CASES} cases"))
}
