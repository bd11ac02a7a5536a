//! FULL vs QUALITY_ONLY vs DIVERSITY_ONLY vs UNIFORM on StageChain.
//!
//! `cargo run --release --example ablation -- [seeds]` (default 5 seeds).

use std::time::Instant;

use dpp_replay::bench::{run_ablation, LoopConfig, Variant};

fn main() -> dpp_replay::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seeds: Vec<u64> = (0..n).collect();
    let config = LoopConfig::default();
    let started = Instant::now();
    let table = run_ablation(&config, &Variant::ALL, &seeds)?;
    print!("{}", table.render());
    println!("\nper-seed medians:");
    for row in &table.rows {
        println!(
            "  {:<15} success {:.3}  diversity {:.3}  redundancy {:.3}  rare-stage {:.3}",
            row.variant.name(),
            row.success.median,
            row.diversity.median,
            row.redundancy.median,
            row.rare_stage_rate.median
        );
    }
    println!("\n{} runs in {:.1?}", seeds.len() * 4, started.elapsed());
    Ok(())
}
