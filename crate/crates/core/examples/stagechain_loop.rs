//! One training run on StageChain with streamed metrics and selections.
//!
//! `cargo run --release --example stagechain_loop -- [VARIANT] [seed]`

use dpp_replay::bench::{
    run_e2dt_loop_with, LoopConfig, LoopObserver, MetricsPoint, SelectionEvent, Variant,
};

struct Printer;

impl LoopObserver for Printer {
    fn on_selection(&mut self, e: &SelectionEvent) -> dpp_replay::Result<()> {
        println!(
            "  step {:>5} select ({:?}): log det {:>8.3}  diversity {:.3}  redundancy {:.3}  rare-stage {:.3}",
            e.step, e.reason, e.logdet, e.metrics.diversity, e.metrics.redundancy, e.metrics.rare_stage_rate
        );
        Ok(())
    }

    fn on_metrics(&mut self, p: &MetricsPoint) -> dpp_replay::Result<()> {
        println!("episode {:>4} (step {:>5}): success {:.2}", p.episodes, p.step, p.success);
        Ok(())
    }
}

fn main() -> dpp_replay::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("FULL").parse()?;
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = LoopConfig::default();
    println!("{variant}, seed {seed}, {} online episodes", config.episodes);
    let run = run_e2dt_loop_with(&config, variant, seed, &mut Printer)?;
    println!(
        "final success {:.2}; mean diversity {:.3}, redundancy {:.3}, rare-stage {:.3}",
        run.final_success(),
        run.mean_diversity(),
        run.mean_redundancy(),
        run.mean_rare_stage_rate()
    );
    Ok(())
}
