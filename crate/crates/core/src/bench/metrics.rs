use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::Embedding;

/// Jitter added to the similarity diagonal before taking the determinant.
pub const DIVERSITY_JITTER: f64 = 1e-6;

/// Size-normalised volume `det(S_Y + 1e-6·I)^{1/|Y|}`, clipped to `[0, 1]`.
///
/// `s_y` is the similarity matrix restricted to the subset. An empty subset
/// scores 0.
pub fn diversity_metric(s_y: &DMatrix<f64>) -> Result<f64> {
    let n = s_y.nrows();
    if s_y.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s_y.ncols(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut m = s_y.clone();
    for i in 0..n {
        m[(i, i)] += DIVERSITY_JITTER;
    }
    let det = match m.clone().cholesky() {
        Some(c) => {
            let logdet: f64 = c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            (logdet / n as f64).exp()
        }
        None => m.determinant().max(0.0).powf(1.0 / n as f64),
    };
    Ok(det.clamp(0.0, 1.0))
}

/// Fraction of subset members whose nearest other member lies within `tau`.
pub fn redundancy_metric(embeddings: &[Embedding], tau: f64) -> f64 {
    let n = embeddings.len();
    if n < 2 {
        return 0.0;
    }
    let close = (0..n)
        .filter(|&i| {
            (0..n)
                .filter(|&j| j != i)
                .any(|j| embeddings[i].distance(&embeddings[j]) <= tau)
        })
        .count();
    close as f64 / n as f64
}

/// Mean and a normal-approximation 95% half-width `1.96·s/√n` (sample
/// standard deviation). A single value has half-width 0.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

pub fn median_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    crate::geometry::median(&mut v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diversity_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((diversity_metric(&id).unwrap() - 1.0).abs() < 1e-5);
        let dup = DMatrix::from_element(2, 2, 1.0);
        assert!(diversity_metric(&dup).unwrap() <= 1e-2);
        assert_eq!(diversity_metric(&DMatrix::zeros(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn redundancy_examples() {
        let far: Vec<Embedding> = (0..4).map(|i| Embedding(vec![10.0 * i as f64])).collect();
        assert_eq!(redundancy_metric(&far, 1.0), 0.0);
        let same = vec![Embedding(vec![1.0]); 3];
        assert_eq!(redundancy_metric(&same, 0.0), 1.0);
        let mixed = vec![
            Embedding(vec![0.0]),
            Embedding(vec![0.05]),
            Embedding(vec![5.0]),
        ];
        assert!((redundancy_metric(&mixed, 0.1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn interval() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci(&[4.0]), (4.0, 0.0));
        assert_eq!(median_of(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
