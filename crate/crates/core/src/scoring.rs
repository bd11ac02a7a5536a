//! Per-window quality scores for a candidate pool.
//!
//! `q(w) = α·RTG̃(w) + β·ũ(w) + ζ·ρ̃(w)` with
//! * `RTG̃` the mid-rank empirical quantile of the window return in the pool,
//! * `ũ` the pool-wise min–max normalised trace of the sample covariance of
//!   `M` MC-dropout predictive means,
//! * `ρ̃` the inverse stage frequency `1 − freq(φ(w)) / max_c freq(c)`.
//!
//! The composite is floored at [`Q_MIN`] so every diagonal entry of the joint
//! kernel stays strictly positive.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SequencePolicy;
use crate::rng;
use crate::window_store::{discounted_window_return, TrajectoryWindow};

pub const Q_MIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
}

impl QualityWeights {
    pub fn new(alpha: f64, beta: f64, zeta: f64) -> Result<Self> {
        let w = QualityWeights { alpha, beta, zeta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.zeta];
        if parts.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "quality weights must be non-negative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "quality weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights {
            alpha: 0.4,
            beta: 0.3,
            zeta: 0.3,
        }
    }
}

/// Which return feeds the quantile component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnSource {
    /// Discounted return over the window only.
    #[default]
    WindowReturn,
    /// Return-to-go at the window's first step (to episode end).
    EpisodeRtg,
}

/// Mid-rank empirical quantile of `returns[target]` within `returns`.
pub fn rtg_quantile(returns: &[f64], target: usize) -> Result<f64> {
    let g = *returns.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target index {target} outside pool of {}",
            returns.len()
        ))
    })?;
    let below = returns.iter().filter(|&&u| u < g).count() as f64;
    let ties = returns.iter().filter(|&&u| u == g).count() as f64;
    Ok((below + 0.5 * ties) / returns.len() as f64)
}

/// Mid-rank quantiles for a whole pool in `O(N log N)`.
pub fn rtg_quantiles(returns: &[f64]) -> Vec<f64> {
    let n = returns.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && returns[order[j + 1]] == returns[order[i]] {
            j += 1;
        }
        let q = (i as f64 + 0.5 * (j - i + 1) as f64) / n as f64;
        for &idx in &order[i..=j] {
            out[idx] = q;
        }
        i = j + 1;
    }
    out
}

/// Trace of the unbiased sample covariance of `M` predictive-mean vectors.
pub fn predictive_uncertainty(predictions: &[Vec<f64>]) -> Result<f64> {
    let m = predictions.len();
    if m < 2 {
        return Err(Error::InsufficientPasses(m));
    }
    let dim = predictions[0].len();
    if let Some(p) = predictions.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut trace = 0.0;
    for d in 0..dim {
        let mean = predictions.iter().map(|p| p[d]).sum::<f64>() / m as f64;
        let ss: f64 = predictions.iter().map(|p| (p[d] - mean).powi(2)).sum();
        trace += ss / (m - 1) as f64;
    }
    Ok(trace)
}

/// Pool-wise min–max normalisation; constant pools map to 0.5.
pub fn normalize_uncertainty(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|u| ((u - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Inverse stage frequency with add-`smoothing` counts.
pub fn stage_coverage(labels: &[u32], smoothing: f64) -> Vec<f64> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(smoothing) += 1.0;
    }
    let max = counts.values().copied().fold(0.0, f64::max);
    labels
        .iter()
        .map(|l| (1.0 - counts[l] / max).clamp(0.0, 1.0))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QualityRow {
    pub rtg_quantile: f64,
    pub uncertainty_raw: f64,
    pub uncertainty_norm: f64,
    pub coverage: f64,
    /// `α·rtg_quantile + β·uncertainty_norm + ζ·coverage` before flooring.
    pub composite: f64,
    /// `max(composite, Q_MIN)`; what the joint kernel consumes.
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub weights: QualityWeights,
    pub rows: Vec<QualityRow>,
}

impl QualityReport {
    pub fn q(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.q).collect()
    }

    /// Columns `window_id,rtg_q,u_raw,u_norm,rho,q`; `window_id` is the pool index.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<quality csv>", e);
        writeln!(out, "window_id,rtg_q,u_raw,u_norm,rho,q").map_err(io)?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                r.rtg_quantile, r.uncertainty_raw, r.uncertainty_norm, r.coverage, r.q
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoringOptions {
    pub weights: QualityWeights,
    /// Stochastic passes `M` (at least 2).
    pub passes: usize,
    pub gamma: f64,
    pub smoothing: f64,
    pub return_source: ReturnSource,
    pub seed: u64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            weights: QualityWeights::default(),
            passes: 8,
            gamma: 0.99,
            smoothing: 0.0,
            return_source: ReturnSource::WindowReturn,
            seed: 0,
        }
    }
}

/// Combines the three components into the floored composite score.
pub fn combine(
    weights: &QualityWeights,
    rtg_q: &[f64],
    u_raw: &[f64],
    coverage: &[f64],
) -> Result<QualityReport> {
    weights.validate()?;
    let n = rtg_q.len();
    if u_raw.len() != n || coverage.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u_raw.len().min(coverage.len()),
        });
    }
    let u_norm = normalize_uncertainty(u_raw);
    let rows = (0..n)
        .map(|i| {
            let composite = weights.alpha * rtg_q[i]
                + weights.beta * u_norm[i]
                + weights.zeta * coverage[i];
            QualityRow {
                rtg_quantile: rtg_q[i],
                uncertainty_raw: u_raw[i],
                uncertainty_norm: u_norm[i],
                coverage: coverage[i],
                composite,
                q: composite.max(Q_MIN),
            }
        })
        .collect();
    Ok(QualityReport {
        weights: *weights,
        rows,
    })
}

/// Scores every window in `pool`. Pass `m` (1-based) of MC-dropout uses the
/// seed derived from `(options.seed, m)` for all windows.
pub fn composite_quality<P: SequencePolicy + ?Sized>(
    pool: &[TrajectoryWindow],
    options: &ScoringOptions,
    model: &P,
) -> Result<QualityReport> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty pool".into()));
    }
    options.weights.validate()?;
    if options.passes < 2 {
        return Err(Error::InsufficientPasses(options.passes));
    }
    let returns: Vec<f64> = pool
        .iter()
        .map(|w| match options.return_source {
            ReturnSource::WindowReturn => discounted_window_return(w, options.gamma),
            ReturnSource::EpisodeRtg => w.rtg[0],
        })
        .collect();
    let rtg_q = rtg_quantiles(&returns);

    let pass_seeds: Vec<u64> = (1..=options.passes as u64)
        .map(|m| rng::derive(options.seed, m))
        .collect();
    let u_raw = pool
        .iter()
        .map(|w| {
            let preds = pass_seeds
                .iter()
                .map(|&s| model.predict_mean(w, s))
                .collect::<Result<Vec<_>>>()?;
            predictive_uncertainty(&preds)
        })
        .collect::<Result<Vec<_>>>()?;

    let labels: Vec<u32> = pool.iter().map(|w| w.stage_label).collect();
    let coverage = stage_coverage(&labels, options.smoothing);
    combine(&options.weights, &rtg_q, &u_raw, &coverage)
}
