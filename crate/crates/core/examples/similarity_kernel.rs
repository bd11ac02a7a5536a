//! Embeddings, median bandwidth, RBF similarity and the joint kernel.

use dpp_replay::geometry::{median_bandwidth, rbf_similarity, Embedding};
use dpp_replay::kernel::{build_joint_kernel, log_det, DEFAULT_LAMBDA};

fn main() -> dpp_replay::Result<()> {
    // Two tight clusters and one outlier.
    let points = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [3.0, 3.0], [3.1, 3.0], [-4.0, 2.0]];
    let embeddings: Vec<Embedding> = points.iter().map(|p| Embedding(p.to_vec())).collect();

    let sigma = median_bandwidth(&embeddings)?;
    let s = rbf_similarity(&embeddings, sigma)?;
    println!("median bandwidth σ = {sigma:.4}");
    println!("similarity:\n{:.3}", s.values);

    let quality = [0.9, 0.8, 0.2, 0.6, 0.6, 0.3];
    let l = build_joint_kernel(&s.values, &quality, DEFAULT_LAMBDA)?;
    println!("joint kernel:\n{:.3}", l.values);

    // Near-duplicates have tiny volume; spread-out items do not.
    for y in [[0, 1], [0, 3], [0, 5]] {
        println!("log det L_{y:?} = {:.3}", log_det(&l.values, &y)?);
    }
    Ok(())
}
