//! Scoring two questions end to end on the deterministic mock backend.
//!
//! Both questions get the same answer from every sample, so answer-only
//! uncertainty is zero for both; the reasoning signals separate them.
//!
//! ```text
//! cargo run --example detect_with_mock
//! ```

use race_core::harness::{parse_dataset, Detector, Gateways, PipelineConfig};
use race_core::gateway::{GatewayClient, MockBackend, MockTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table: MockTable = serde_json::from_str(include_str!("../tests/fixtures/figure1_table.json"))?;
    let records = parse_dataset(include_str!("../tests/fixtures/figure1_dataset.jsonl").as_bytes())?;
    let backend = MockBackend::from_table(table, 0)
        .with_knowledge(records.iter().map(|r| (r.question.clone(), r.gold_answers[0].clone())));
    let detector = Detector::new(PipelineConfig::default(), Gateways::single(GatewayClient::mock(backend)))?;

    println!("{:<4}{:>8}{:>8}{:>8}{:>8}{:>8}  label", "id", "S_AA", "S_CA", "S_CC", "S_Coh", "RACE");
    for record in &records {
        let d = detector.detect(record)?;
        let s = &d.scores;
        let label = match &d.label {
            Some(v) if v.hallucinated => "hallucinated",
            Some(_) => "correct",
            None => "-",
        };
        println!(
            "{:<4}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>8.3}  {label}",
            d.id, s.s_aa, s.s_ca, s.s_cc, s.s_coh, s.s_race
        );
    }
    Ok(())
}
