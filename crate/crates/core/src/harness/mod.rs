//! Evaluation harness: datasets, batch detection, judge labeling, score
//! files and reports.

pub mod dataset;
pub mod judge;
pub mod pipeline;
pub mod report;
pub mod store;

pub use dataset::{load_dataset, parse_dataset, DatasetError};
pub use judge::{judge_label, parse_choice, render_judge_prompt, JudgeChoice, JudgeError, JudgeVerdict};
pub use pipeline::{
    generation_prompt, run_detection, DetectError, Detection, Detector, Gateways, HarnessError, PipelineConfig,
    RunOptions, RunSummary,
};
pub use report::{compute_report, normalize_metric, EvalReport, NormalizedScore};
pub use store::{read_scores, write_scores, ScoreRecord, StoreError};
