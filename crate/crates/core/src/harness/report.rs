use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::ScoreRecord;
use crate::metrics::{auroc, percentile_normalize, MetricsError};

/// Per-metric AUROC over the labeled, scored records of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: BTreeMap<String, f64>,
    pub records: usize,
    pub labeled: usize,
    pub positive_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

/// Scored, labeled records as `(record, hallucinated)`.
fn usable(records: &[ScoreRecord]) -> Vec<(&ScoreRecord, bool)> {
    records
        .iter()
        .filter(|r| !r.skipped && r.scores.is_some())
        .filter_map(|r| r.hallucinated.map(|h| (r, h)))
        .collect()
}

/// AUROC for every metric found on the records. A metric missing from some
/// records (an unavailable baseline) is scored on the records that have it
/// and left out if those hold a single class.
pub fn compute_report(records: &[ScoreRecord], fingerprint: Option<String>) -> Result<EvalReport, MetricsError> {
    let rows = usable(records);
    let labels: Vec<bool> = rows.iter().map(|(_, h)| *h).collect();
    let positives = labels.iter().filter(|h| **h).count();
    if positives == 0 || positives == labels.len() {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut names: Vec<String> = Vec::new();
    for (r, _) in &rows {
        for name in r.scores.as_ref().expect("filtered").metric_names() {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    let mut table = BTreeMap::new();
    for name in names {
        let (scores, labels): (Vec<f64>, Vec<bool>) = rows
            .iter()
            .filter_map(|(r, h)| r.scores.as_ref().and_then(|b| b.metric(&name)).map(|s| (s, *h)))
            .unzip();
        match auroc(&scores, &labels) {
            Ok(v) => {
                table.insert(name, v);
            }
            Err(MetricsError::DegenerateLabels) => {
                tracing::warn!(metric = %name, "metric present on a single class only; omitted");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        auroc: table,
        records: records.len(),
        labeled: rows.len(),
        positive_rate: positives as f64 / rows.len() as f64,
        config_fingerprint: fingerprint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScore {
    pub id: String,
    pub metric: String,
    pub score: f64,
    pub normalized: f64,
}

/// Percentile-normalizes one metric across the scored records.
pub fn normalize_metric(records: &[ScoreRecord], metric: &str) -> Result<Vec<NormalizedScore>, MetricsError> {
    let rows: Vec<(&str, f64)> = records
        .iter()
        .filter(|r| !r.skipped)
        .filter_map(|r| r.scores.as_ref().and_then(|b| b.metric(metric)).map(|s| (r.id.as_str(), s)))
        .collect();
    let scores: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
    let normalized = percentile_normalize(&scores)?;
    Ok(rows
        .into_iter()
        .zip(normalized)
        .map(|((id, score), normalized)| NormalizedScore {
            id: id.to_string(),
            metric: metric.to_string(),
            score,
            normalized,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{ComponentScores, ScoreBundle};
    use crate::model::OutputMode;

    fn scored(id: &str, s_cc: f64, label: Option<bool>) -> ScoreRecord {
        let mut rec = ScoreRecord::skipped(id, OutputMode::Lrm, "");
        rec.skipped = false;
        rec.reason = None;
        rec.scores = Some(ScoreBundle::new(
            ComponentScores::new(0.1, 0.1, s_cc, 0.1),
            OutputMode::Lrm,
            Default::default(),
        ));
        rec.hallucinated = label;
        rec
    }

    #[test]
    fn report_over_labeled_records() {
        let recs = vec![
            scored("a", 0.9, Some(true)),
            scored("b", 0.1, Some(false)),
            scored("c", 0.5, None),
            ScoreRecord::skipped("d", OutputMode::Lrm, "unterminated"),
        ];
        let rep = compute_report(&recs, Some("fp".into())).unwrap();
        assert_eq!(rep.auroc["s_cc"], 1.0);
        assert_eq!(rep.auroc["s_aa"], 0.5);
        assert_eq!((rep.records, rep.labeled), (4, 2));
        assert_eq!(rep.positive_rate, 0.5);
    }

    #[test]
    fn single_class_is_degenerate() {
        let recs = vec![scored("a", 0.9, Some(true)), scored("b", 0.1, Some(true))];
        assert_eq!(compute_report(&recs, None), Err(MetricsError::DegenerateLabels));
    }

    #[test]
    fn normalize_column() {
        let recs = vec![scored("a", 0.9, None), scored("b", 0.1, None)];
        let out = normalize_metric(&recs, "s_cc").unwrap();
        assert_eq!(out[0].normalized, 1.0);
        assert_eq!(out[1].normalized, 0.5);
    }
}
