//! The reasoning-level signals for one question: chain extraction, step
//! weights, contradiction against sampled chains, answer alignment and
//! entity coverage.
//!
//! ```text
//! cargo run --example reasoning_consistency
//! ```

use race_core::extraction::{CotExtractor, ExtractionPromptTemplate};
use race_core::gateway::{GatewayClient, MockBackend, MockTable};
use race_core::model::{normalize_entities, parse_output, OutputMode, QueryRecord, ThinkTags};
use race_core::reasoning::{s_ca, s_cc, s_coh, step_weights, AlignmentInput, AlignmentMeasure};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table: MockTable = serde_json::from_str(include_str!("../tests/fixtures/figure1_table.json"))?;
    let gw = GatewayClient::mock(MockBackend::from_table(table.clone(), 0));
    let extractor = CotExtractor::new(gw.clone(), ExtractionPromptTemplate::default())?;
    let tags = ThinkTags::default();

    for (id, rule) in ["a", "b"].iter().zip(&table.generate) {
        let record = QueryRecord {
            id: id.to_string(),
            question: rule.prompt_contains.clone(),
            context: None,
            gold_answers: Vec::new(),
        };
        let main = parse_output(&rule.main, OutputMode::Lrm, true, &tags)?;
        let samples = rule
            .samples
            .iter()
            .map(|s| parse_output(s, OutputMode::Lrm, false, &tags))
            .collect::<Result<Vec<_>, _>>()?;

        let main_cot = extractor.extract_cot(&record, &main)?;
        let sample_cots = samples
            .iter()
            .map(|s| extractor.extract_cot(&record, s))
            .collect::<Result<Vec<_>, _>>()?;

        let weights = step_weights(&gw, &record.question, &main_cot.steps, &main.answer);
        let consistency = s_cc(&gw, &main_cot, &weights, &sample_cots)?;
        let alignment = s_ca(
            &gw,
            &AlignmentInput {
                question: &record.question,
                main_cot: &main_cot,
                sampled_answers: samples.iter().map(|s| s.answer.as_str()).collect(),
            },
            AlignmentMeasure::Nll,
        )?;
        let e_r = normalize_entities(gw.ner_entities_or_fallback(main.reasoning_source())?);
        let e_c = normalize_entities(gw.ner_entities_or_fallback(&main_cot.joined(" "))?);

        println!("record {id}: answer {:?}", main.answer);
        for (step, w) in main_cot.steps.iter().zip(&weights.weights) {
            println!("  {w:.3}  {step}");
        }
        println!("  weights from {:?}", weights.source);
        println!("  S_CC  {consistency:.4}");
        println!("  S_CA  {alignment:.4}");
        println!("  S_Coh {:.4} ({} of {} entities kept)", s_coh(&e_r, &e_c), e_r.len() - e_r.iter().filter(|e| !e_c.contains(e)).count(), e_r.len());
    }
    Ok(())
}
