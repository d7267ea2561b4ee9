//! Answer uncertainty: semantic clustering of answers and the
//! coherence-adjusted cluster entropy (SINdex).

use serde::{Deserialize, Serialize};

use crate::gateway::EmbeddingVector;

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.9;

/// Semantic clusters over a list of answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Answer indices per cluster, in order of first appearance.
    pub clusters: Vec<Vec<usize>>,
    /// Raw share of answers per cluster.
    pub proportions: Vec<f64>,
    /// Shares shrunk by intra-cluster coherence. Equal to `proportions`
    /// until [`adjusted_proportions`] runs.
    pub adjusted: Vec<f64>,
    pub threshold: f64,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn item_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// Pairwise cosine similarities clamped to `[0, 1]`, unit diagonal.
pub fn similarity_matrix(vectors: &[EmbeddingVector]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut sims = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = vectors[i].cosine(&vectors[j]).clamp(0.0, 1.0);
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    sims
}

/// Sequential complete-link clustering on embeddings.
pub fn cluster_answers(vectors: &[EmbeddingVector], threshold: f64) -> ClusterSet {
    cluster_by_similarity(&similarity_matrix(vectors), threshold)
}

/// Visits items in order and puts each into the first cluster whose every
/// member is at least `threshold` similar to it, else opens a new cluster.
///
/// # Panics
///
/// On an empty matrix or a threshold outside `(0, 1]`.
pub fn cluster_by_similarity(sims: &[Vec<f64>], threshold: f64) -> ClusterSet {
    assert!(!sims.is_empty(), "cannot cluster zero answers");
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold {threshold} outside (0, 1]");
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, row) in sims.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| c.iter().all(|&j| row[j].clamp(0.0, 1.0) >= threshold))
        {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    let n = sims.len() as f64;
    let proportions: Vec<f64> = clusters.iter().map(|c| c.len() as f64 / n).collect();
    ClusterSet {
        adjusted: proportions.clone(),
        clusters,
        proportions,
        threshold,
    }
}

/// Mean clamped similarity over unordered pairs of distinct members;
/// singletons count as perfectly coherent.
pub fn cluster_coherence(members: &[usize], sims: &[Vec<f64>]) -> f64 {
    if members.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &x) in members.iter().enumerate() {
        for &y in &members[a + 1..] {
            total += sims[x][y].clamp(0.0, 1.0);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Shrinks each cluster's share by its coherence. The result is not
/// renormalized, so the adjusted shares may sum to less than one.
pub fn adjusted_proportions(cs: &ClusterSet, sims: &[Vec<f64>]) -> ClusterSet {
    let adjusted = cs
        .clusters
        .iter()
        .zip(&cs.proportions)
        .map(|(members, p)| p * cluster_coherence(members, sims))
        .collect();
    ClusterSet {
        adjusted,
        ..cs.clone()
    }
}

/// Entropy (nats) over the adjusted shares, with `0 ln 0 = 0`.
pub fn sindex_score(cs: &ClusterSet) -> f64 {
    cs.adjusted
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Clusters, adjusts and scores in one call.
pub fn answer_uncertainty(vectors: &[EmbeddingVector], threshold: f64) -> (f64, ClusterSet) {
    let sims = similarity_matrix(vectors);
    let cs = adjusted_proportions(&cluster_by_similarity(&sims, threshold), &sims);
    (sindex_score(&cs), cs)
}
