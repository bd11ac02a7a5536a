use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{mean_ci, median_of};
use super::training::{run_e2dt_loop, LoopConfig, RunMetrics, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// 95% half-width.
    pub ci: f64,
    pub median: f64,
}

impl Estimate {
    fn of(values: &[f64]) -> Self {
        let (mean, ci) = mean_ci(values);
        Estimate {
            mean,
            ci,
            median: median_of(values),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Success at the final evaluation point.
    pub success: Estimate,
    /// Subset metrics averaged over each run, then across seeds.
    pub diversity: Estimate,
    pub redundancy: Estimate,
    pub rare_stage_rate: Estimate,
    pub runs: Vec<RunMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Runs every `(variant, seed)` pair (in parallel) and aggregates per variant.
/// Results do not depend on scheduling.
pub fn run_ablation(config: &LoopConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one variant and one seed".into(),
        ));
    }
    config.validate()?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(v, s)| run_e2dt_loop(config, v, s))
        .collect::<Result<Vec<_>>>()?;

    let rows = variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| {
            let runs = runs[vi * seeds.len()..(vi + 1) * seeds.len()].to_vec();
            let col = |f: fn(&RunMetrics) -> f64| Estimate::of(&runs.iter().map(f).collect::<Vec<_>>());
            AblationRow {
                variant,
                success: col(RunMetrics::final_success),
                diversity: col(RunMetrics::mean_diversity),
                redundancy: col(RunMetrics::mean_redundancy),
                rare_stage_rate: col(RunMetrics::mean_rare_stage_rate),
                runs,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub const CSV_HEADER: &'static str = "variant,success_mean,success_ci,diversity_mean,diversity_ci,redundancy_mean,redundancy_ci,rare_stage_mean,rare_stage_ci";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<ablation csv>", e);
        writeln!(out, "{}", Self::CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.success.mean,
                r.success.ci,
                r.diversity.mean,
                r.diversity.ci,
                r.redundancy.mean,
                r.redundancy.ci,
                r.rare_stage_rate.mean,
                r.rare_stage_rate.ci
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Fixed-width text table, `mean ± ci` per cell.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<15} {:>17} {:>17} {:>17} {:>17}",
            "variant", "success", "diversity", "redundancy", "rare-stage"
        );
        for r in &self.rows {
            let cell = |e: &Estimate| format!("{:.3} ± {:.3}", e.mean, e.ci);
            let _ = writeln!(
                s,
                "{:<15} {:>17} {:>17} {:>17} {:>17}",
                r.variant.name(),
                cell(&r.success),
                cell(&r.diversity),
                cell(&r.redundancy),
                cell(&r.rare_stage_rate)
            );
        }
        s
    }
}
