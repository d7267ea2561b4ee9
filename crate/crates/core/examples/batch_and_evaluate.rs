//! Batch scoring into a resumable score file, then AUROC per metric, a
//! weight search on the head of the file, and percentile normalization.
//!
//! ```text
//! cargo run --example batch_and_evaluate
//! ```

use race_core::aggregate::{optimize_weights, ComponentScores};
use race_core::config::RunConfig;
use race_core::harness::{compute_report, load_dataset, normalize_metric, read_scores, run_detection, Detector, RunOptions};
use race_core::metrics::train_test_split_head;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let mut cfg = RunConfig::default();
    cfg.mock.enabled = true;
    cfg.mock.table = Some(format!("{fixtures}/batch_table.json").into());
    cfg.validate()?;

    let records = load_dataset(format!("{fixtures}/dataset_25.jsonl"))?;
    let detector = Detector::new(cfg.pipeline_config()?, cfg.gateways(Some(&records))?)?;
    let dir = tempfile::tempdir()?;
    let out = dir.path().join("scores.jsonl");
    let opts = RunOptions {
        out: out.clone(),
        fingerprint: cfg.fingerprint()?,
        resume: true,
    };
    let summary = run_detection(&detector, &records, &opts)?;
    println!("scored {} records, {} skipped", summary.written, summary.skipped);

    // A second run finds everything done.
    let again = run_detection(&detector, &records, &opts)?;
    println!("resume: {} already done, {} new", again.already_done, again.written);

    let scores = read_scores(&out)?;
    let report = compute_report(&scores, Some(opts.fingerprint.clone()))?;
    println!("AUROC over {} labeled records:", report.labeled);
    for (metric, value) in &report.auroc {
        println!("  {metric:<12} {value:.3}");
    }

    let labeled: Vec<(ComponentScores, bool)> = scores
        .iter()
        .filter_map(|r| Some((r.scores.as_ref()?.components().masked(r.mode), r.hallucinated?)))
        .collect();
    let (train, _) = train_test_split_head(&labeled, 0.5)?;
    let tuned = optimize_weights(train)?;
    println!("tuned weights {} (train AUROC {:.3})", tuned.weights, tuned.train_auroc);

    for row in normalize_metric(&scores, "s_race")?.iter().take(5) {
        println!("  {} s_race {:.3} -> percentile {:.2}", row.id, row.score, row.normalized);
    }
    Ok(())
}
