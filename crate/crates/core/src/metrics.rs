//! Rank statistics: AUROC, percentile normalization and the head split
//! used for weight tuning.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("labels contain a single class; AUROC is undefined")]
    DegenerateLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("scores must be finite")]
    NonFinite,
    #[error("no scores given")]
    Empty,
    #[error("split of {n} records at fraction {fraction} leaves a side empty")]
    EmptySplit { n: usize, fraction: String },
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve with `true` labels as positives, from the
/// tie-corrected rank-sum statistic.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Maps each score to its average rank over `n`, so the maximum maps to 1.
pub fn percentile_normalize(scores: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n = scores.len() as f64;
    Ok(average_ranks(scores).into_iter().map(|r| r / n).collect())
}

/// First `floor(n * fraction)` items for training, the rest for testing.
/// The training side is clamped to `1..=n-1`.
pub fn train_test_split_head<T>(records: &[T], fraction: f64) -> Result<(&[T], &[T]), MetricsError> {
    let n = records.len();
    let err = || MetricsError::EmptySplit {
        n,
        fraction: fraction.to_string(),
    };
    if !(fraction > 0.0 && fraction < 1.0) || n < 2 {
        return Err(err());
    }
    // The epsilon keeps products like 10 * 0.3 from flooring to 2.
    let n_train = ((n as f64 * fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    Ok(records.split_at(n_train))
}
