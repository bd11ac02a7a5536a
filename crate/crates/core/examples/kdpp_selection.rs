//! Greedy MAP against the exhaustive optimum and the exact k-DPP sampler.

use std::collections::BTreeMap;

use dpp_replay::geometry::{median_bandwidth, rbf_similarity, Embedding};
use dpp_replay::kernel::{
    build_joint_kernel, exhaustive_map, greedy_map, kdpp_sample, kdpp_subset_probability,
};
use rand::Rng;

fn main() -> dpp_replay::Result<()> {
    let mut rng = dpp_replay::rng::seeded(3);
    let embeddings: Vec<Embedding> = (0..10)
        .map(|_| Embedding(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
        .collect();
    let quality: Vec<f64> = (0..10).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s = rbf_similarity(&embeddings, median_bandwidth(&embeddings)?)?;
    let l = build_joint_kernel(&s.values, &quality, 1e-3)?;

    let k = 4;
    let greedy = greedy_map(&l.values, k)?;
    let best = exhaustive_map(&l.values, k)?;
    println!("greedy     {:?}  log det {:.4}", greedy.indices, greedy.logdet);
    println!("  per-step gains {:?}", greedy.gains.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("exhaustive {:?}  log det {:.4}", best.indices, best.logdet);

    // Sampling on a five-item kernel: empirical vs exact subset frequencies.
    let small = l.values.view((0, 0), (5, 5)).into_owned();
    let draws = 20_000;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for seed in 0..draws {
        *counts.entry(kdpp_sample(&small, 2, seed)?).or_default() += 1;
    }
    println!("\nsubset   empirical  exact");
    for (y, c) in counts {
        println!(
            "{:<8} {:.4}     {:.4}",
            format!("{y:?}"),
            c as f64 / draws as f64,
            kdpp_subset_probability(&small, &y)?
        );
    }
    Ok(())
}
