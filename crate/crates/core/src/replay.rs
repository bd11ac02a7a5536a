//! Debiased mixed replay.
//!
//! A batch of `B` draws takes `⌊ηB⌋` uniformly (with replacement) from the
//! selected windows `Y` and the rest uniformly from the whole buffer `D`.
//! Every drawn window `i` carries its mixture probability
//!
//! ```text
//! p_i = η·1{i ∈ Y}/|Y| + (1 − η)/|D|,    ω_i = (1/|D|) / p_i
//! ```
//!
//! regardless of which stream produced it, so `E[ω_i f(i)]` over a draw is the
//! uniform mean of `f` over `D`.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Selected,
    Global,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Selected => "SELECTED",
            Source::Global => "GLOBAL",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchEntry {
    /// Dense window index into the buffer, `0..|D|`.
    pub window_index: usize,
    pub source: Source,
    pub probability: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub entries: Vec<BatchEntry>,
    pub eta: f64,
    pub selected_size: usize,
    pub buffer_size: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `ω_i` exactly as defined; unbiased.
    Raw,
    /// Rescaled so the batch-mean weight is 1.
    #[default]
    MeanOne,
}

/// Number of draws taken from the selected subset, `⌊ηB⌋`.
pub fn selected_draws(eta: f64, batch_size: usize) -> usize {
    // Tolerate representation error such as 0.29 * 100 = 28.999999999999996.
    ((eta * batch_size as f64) + 1e-9).floor() as usize
}

/// Mixture probability of one draw landing on a given window.
pub fn inclusion_probability(in_selected: bool, selected_size: usize, buffer_size: usize, eta: f64) -> f64 {
    let global = (1.0 - eta) / buffer_size as f64;
    if in_selected && selected_size > 0 {
        eta / selected_size as f64 + global
    } else {
        global
    }
}

pub fn mixed_sample(
    selected: &[usize],
    buffer_size: usize,
    batch_size: usize,
    eta: f64,
    seed: u64,
) -> Result<MixedBatch> {
    if buffer_size == 0 {
        return Err(Error::InvalidArgument("replay buffer has no windows".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "mix ratio must lie in [0, 1], got {eta}"
        )));
    }
    if eta > 0.0 && selected.is_empty() {
        return Err(Error::InvalidArgument(
            "selected subset is empty but the mix ratio is positive".into(),
        ));
    }
    let mut members = selected.to_vec();
    members.sort_unstable();
    if members.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("selected subset has repeated windows".into()));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= buffer_size) {
        return Err(Error::InvalidArgument(format!(
            "selected window {bad} outside buffer of {buffer_size}"
        )));
    }

    let n_sel = selected_draws(eta, batch_size);
    let mut rng = rng::seeded(seed);
    let unit = 1.0 / buffer_size as f64;
    let entry = |window_index: usize, source: Source| {
        let in_sel = members.binary_search(&window_index).is_ok();
        let p = inclusion_probability(in_sel, members.len(), buffer_size, eta);
        BatchEntry {
            window_index,
            source,
            probability: p,
            weight: unit / p,
        }
    };
    let mut entries = Vec::with_capacity(batch_size);
    for _ in 0..n_sel {
        let i = selected[rng.gen_range(0..selected.len())];
        entries.push(entry(i, Source::Selected));
    }
    for _ in n_sel..batch_size {
        let i = rng.gen_range(0..buffer_size);
        entries.push(entry(i, Source::Global));
    }
    Ok(MixedBatch {
        entries,
        eta,
        selected_size: members.len(),
        buffer_size,
    })
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn window_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.window_index).collect()
    }

    /// Audit trace with columns `entry,window_id,source,p,omega`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<batch trace>", e);
        writeln!(out, "entry,window_id,source,p,omega").map_err(io)?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{}",
                e.window_index,
                e.source.as_str(),
                e.probability,
                e.weight
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

pub fn normalize_weights(mut batch: MixedBatch, mode: WeightMode) -> MixedBatch {
    if mode == WeightMode::MeanOne && !batch.entries.is_empty() {
        let mean = batch.entries.iter().map(|e| e.weight).sum::<f64>() / batch.len() as f64;
        if mean > 0.0 {
            for e in &mut batch.entries {
                e.weight /= mean;
            }
        }
    }
    batch
}

/// `Σ ω_i · loss_i` over the batch.
pub fn weighted_loss(batch: &MixedBatch, losses: &[f64]) -> Result<f64> {
    if losses.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            found: losses.len(),
        });
    }
    if let Some(index) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(batch
        .entries
        .iter()
        .zip(losses)
        .map(|(e, l)| e.weight * l)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_weights(w: &[f64]) -> MixedBatch {
        MixedBatch {
            entries: w
                .iter()
                .enumerate()
                .map(|(i, &weight)| BatchEntry {
                    window_index: i,
                    source: Source::Global,
                    probability: 0.0,
                    weight,
                })
                .collect(),
            eta: 0.0,
            selected_size: 0,
            buffer_size: w.len().max(1),
        }
    }

    #[test]
    fn eta_zero_is_uniform() {
        let b = mixed_sample(&[], 50, 32, 0.0, 4).unwrap();
        assert_eq!(b.len(), 32);
        for e in &b.entries {
            assert_eq!(e.source, Source::Global);
            assert_eq!(e.probability, 1.0 / 50.0);
            assert_eq!(e.weight, 1.0);
        }
    }

    #[test]
    fn worked_probabilities() {
        let y: Vec<usize> = (0..10).collect();
        let b = mixed_sample(&y, 100, 40, 0.5, 1).unwrap();
        assert_eq!(b.entries.iter().filter(|e| e.source == Source::Selected).count(), 20);
        for e in &b.entries {
            if e.window_index < 10 {
                assert!((e.probability - 0.055).abs() < 1e-15);
                assert!((e.weight - 0.01 / 0.055).abs() < 1e-12);
                assert!((e.weight - 0.181_818).abs() < 1e-5);
            } else {
                assert!((e.probability - 0.005).abs() < 1e-15);
                assert!((e.weight - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_selection_gives_unit_weights() {
        let y: Vec<usize> = (0..25).collect();
        let b = mixed_sample(&y, 25, 16, 1.0, 9).unwrap();
        assert!(b.entries.iter().all(|e| (e.weight - 1.0).abs() < 1e-12));
    }

    #[test]
    fn errors() {
        assert!(mixed_sample(&[], 10, 4, 0.5, 0).is_err());
        assert!(mixed_sample(&[1], 0, 4, 0.5, 0).is_err());
        assert!(mixed_sample(&[1], 10, 0, 0.5, 0).is_err());
        assert!(mixed_sample(&[1], 10, 4, 1.5, 0).is_err());
        assert!(mixed_sample(&[10], 10, 4, 0.5, 0).is_err());
        assert!(mixed_sample(&[1, 1], 10, 4, 0.5, 0).is_err());
    }

    #[test]
    fn normalisation_modes() {
        let b = normalize_weights(with_weights(&[2.0, 2.0]), WeightMode::MeanOne);
        assert_eq!(b.weights(), vec![1.0, 1.0]);
        let b = normalize_weights(with_weights(&[1.0, 3.0]), WeightMode::MeanOne);
        assert_eq!(b.weights(), vec![0.5, 1.5]);
        let b = normalize_weights(with_weights(&[0.3, 7.0]), WeightMode::Raw);
        assert_eq!(b.weights(), vec![0.3, 7.0]);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(weighted_loss(&with_weights(&[1.0; 3]), &[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(weighted_loss(&with_weights(&[2.0, 0.5]), &[1.0, 4.0]).unwrap(), 4.0);
        assert_eq!(weighted_loss(&with_weights(&[]), &[]).unwrap(), 0.0);
        assert!(matches!(
            weighted_loss(&with_weights(&[1.0, 1.0]), &[1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn trace_csv() {
        let b = mixed_sample(&[3], 4, 2, 0.5, 0).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("entry,window_id,source,p,omega"));
        assert_eq!(lines.next(), Some("0,3,SELECTED,0.625,0.4"));
    }

    #[test]
    fn same_seed_same_batch() {
        let y = [2, 5, 7];
        assert_eq!(
            mixed_sample(&y, 30, 20, 0.7, 11).unwrap(),
            mixed_sample(&y, 30, 20, 0.7, 11).unwrap()
        );
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(d in 1usize..60, frac in 0.0f64..1.0, eta in 0.0f64..=1.0) {
            let k = ((d as f64 * frac) as usize).max(1).min(d);
            let total: f64 = (0..d)
                .map(|i| inclusion_probability(i < k, k, d, eta))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn global_only_weight(d in 2usize..200, eta in 0.0f64..0.99, seed in 0u64..1000) {
            let b = mixed_sample(&[0], d, 32, eta, seed).unwrap();
            for e in b.entries.iter().filter(|e| e.window_index != 0) {
                prop_assert!((e.weight - 1.0 / (1.0 - eta)).abs() < 1e-9);
            }
        }

        #[test]
        fn mean_one_preserves_ranking(w in prop::collection::vec(0.01f64..10.0, 1..20),
                                      losses in prop::collection::vec(0.0f64..5.0, 20)) {
            let raw = with_weights(&w);
            let norm = normalize_weights(raw.clone(), WeightMode::MeanOne);
            let mean: f64 = norm.weights().iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
            let l = &losses[..w.len()];
            let a = weighted_loss(&raw, l).unwrap();
            let b = weighted_loss(&norm, l).unwrap();
            let scale = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((a - b * scale).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
