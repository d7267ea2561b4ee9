//! Answer uncertainty from clustered answer embeddings.
//!
//! Answers are embedded, grouped by complete-link clustering at a cosine
//! threshold, and each cluster's share is shrunk by how tight the cluster is
//! before taking the entropy.
//!
//! ```text
//! cargo run --example sindex_answer_uncertainty
//! ```

use race_core::answer::{answer_uncertainty, cluster_coherence, similarity_matrix, DEFAULT_CLUSTER_THRESHOLD};
use race_core::gateway::{EmbeddingVector, GatewayClient, MockBackend};

fn report(label: &str, vectors: &[EmbeddingVector]) {
    let (score, clusters) = answer_uncertainty(vectors, DEFAULT_CLUSTER_THRESHOLD);
    let sims = similarity_matrix(vectors);
    println!("{label}: score {score:.4}");
    for (members, (p, adj)) in clusters.clusters.iter().zip(clusters.proportions.iter().zip(&clusters.adjusted)) {
        println!(
            "  cluster {members:?}: share {p:.3}, coherence {:.3}, adjusted {adj:.3}",
            cluster_coherence(members, &sims)
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Hand-made vectors: five near-identical answers and one outlier.
    let mut vectors = vec![EmbeddingVector::new(vec![1.0, 0.0, 0.0]); 5];
    vectors.push(EmbeddingVector::new(vec![0.0, 1.0, 0.0]));
    report("five plus one", &vectors);

    // Slightly spread answers: one cluster, but less than perfectly coherent.
    let spread: Vec<EmbeddingVector> = [0.0, 0.1, 0.2, 0.3]
        .iter()
        .map(|t: &f64| EmbeddingVector::new(vec![t.cos(), t.sin(), 0.0]))
        .collect();
    report("spread", &spread);

    // Through the gateway: the mock embeds text with hashed bag-of-words.
    let gw = GatewayClient::mock(MockBackend::synthetic(0));
    let answers: Vec<String> = ["Paris", "Paris", "paris", "Lyon", "Marseille", "Paris"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    report("embedded answers", &gw.embed(&answers)?);
    Ok(())
}
