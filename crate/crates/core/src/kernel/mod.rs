//! Quality–diversity joint kernel and determinantal subset selection.
//!
//! `L = Q^{1/2} S Q^{1/2} + λI`, i.e. `L_ij = √q_i · S_ij · √q_j + λ[i = j]`.
//! A subset `Y` is scored by `log det(L_Y)`: long vectors (high quality)
//! that point in different directions (low similarity) span more volume.
//!
//! * [`greedy_map`] is the production selector.
//! * [`exhaustive_map`], [`kdpp_subset_probability`] and [`kdpp_sample`] are
//!   exact, size-guarded references used to verify it.

mod map;
mod sampling;

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::write_matrix_csv;

pub use map::{exhaustive_map, greedy_map, EPS_PD, EXHAUSTIVE_GUARD};
pub use sampling::{kdpp_sample, kdpp_subset_probability, SAMPLER_MAX_N, SUBSET_PROB_MAX_N};

/// Default kernel regulariser.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// Cholesky pivots at or below this make `log_det` report `-∞`.
pub const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct JointKernel {
    pub values: DMatrix<f64>,
    pub lambda: f64,
    pub quality: Vec<f64>,
}

impl JointKernel {
    pub fn len(&self) -> usize {
        self.quality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quality.is_empty()
    }

    /// Row-major CSV preceded by a `N,lambda` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{}", self.len(), self.lambda)
            .map_err(|e| Error::io("<kernel csv>", e))?;
        write_matrix_csv(&self.values, out)
    }
}

pub fn build_joint_kernel(
    similarity: &DMatrix<f64>,
    quality: &[f64],
    lambda: f64,
) -> Result<JointKernel> {
    let n = quality.len();
    if similarity.nrows() != n || similarity.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: similarity.nrows(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kernel regulariser must be finite and non-negative, got {lambda}"
        )));
    }
    if let Some((index, &value)) = quality
        .iter()
        .enumerate()
        .find(|(_, q)| !(**q > 0.0 && q.is_finite()))
    {
        return Err(Error::NonPositiveQuality { index, value });
    }
    let mut values = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            values[(i, j)] = (quality[i] * quality[j]).sqrt() * similarity[(i, j)];
        }
        values[(j, j)] += lambda;
    }
    Ok(JointKernel {
        values,
        lambda,
        quality: quality.to_vec(),
    })
}

/// Greedy or exhaustive MAP output. `gains[t]` is the log Schur complement
/// of `indices[t]` given `indices[..t]`, so the gains sum to `logdet`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
    pub logdet: f64,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_square(l: &DMatrix<f64>) -> Result<usize> {
    if l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch {
            expected: l.nrows(),
            found: l.ncols(),
        });
    }
    Ok(l.nrows())
}

fn check_subset(n: usize, subset: &[usize]) -> Result<()> {
    for (pos, &i) in subset.iter().enumerate() {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "index {i} out of range for a {n}×{n} kernel"
            )));
        }
        if subset[..pos].contains(&i) {
            return Err(Error::InvalidArgument(format!("index {i} repeated")));
        }
    }
    Ok(())
}

/// Log Cholesky pivots of `L_Y` taken in the order of `subset`; `None`
/// once a pivot is at or below [`SINGULAR_PIVOT`].
pub(crate) fn log_pivots(l: &DMatrix<f64>, subset: &[usize]) -> Option<Vec<f64>> {
    let k = subset.len();
    let mut chol = vec![0.0; k * k];
    let mut out = Vec::with_capacity(k);
    for r in 0..k {
        for c in 0..=r {
            let mut v = l[(subset[r], subset[c])];
            for t in 0..c {
                v -= chol[r * k + t] * chol[c * k + t];
            }
            if r == c {
                if !(v > SINGULAR_PIVOT) {
                    return None;
                }
                out.push(v.ln());
                chol[r * k + r] = v.sqrt();
            } else {
                chol[r * k + c] = v / chol[c * k + c];
            }
        }
    }
    Some(out)
}

/// `log det(L_Y)` by Cholesky; `-∞` when `L_Y` is numerically singular.
/// The empty subset has log-determinant 0.
pub fn log_det(l: &DMatrix<f64>, subset: &[usize]) -> Result<f64> {
    let n = check_square(l)?;
    check_subset(n, subset)?;
    Ok(log_pivots(l, subset).map_or(f64::NEG_INFINITY, |p| p.iter().sum()))
}

/// `e_0 .. e_k` of `values`.
pub fn elementary_symmetric(values: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (n, &v) in values.iter().enumerate() {
        for l in (1..=k.min(n + 1)).rev() {
            e[l] += v * e[l - 1];
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let k = build_joint_kernel(&id, &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(k.values, id);

        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let k = build_joint_kernel(&s, &[4.0, 1.0], 0.0).unwrap();
        assert_eq!(k.values[(0, 1)], 1.0);
        assert_eq!(k.values[(1, 0)], 1.0);

        let k = build_joint_kernel(&s, &[1e-12, 1.0], 0.25).unwrap();
        assert!(k.values[(0, 1)].abs() < 1e-6);
        assert!((k.values[(0, 0)] - 0.25).abs() < 1e-11);
    }

    #[test]
    fn kernel_rejects_bad_quality() {
        let s = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            build_joint_kernel(&s, &[1.0, 0.0], 0.1),
            Err(Error::NonPositiveQuality { index: 1, .. })
        ));
        assert!(build_joint_kernel(&s, &[1.0], 0.1).is_err());
        assert!(build_joint_kernel(&s, &[1.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn log_det_examples() {
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(log_det(&l, &[]).unwrap(), 0.0);
        assert!((log_det(&l, &[0, 1]).unwrap() - 6f64.ln()).abs() < 1e-15);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(log_det(&dup, &[0, 1]).unwrap(), f64::NEG_INFINITY);
        assert!(log_det(&l, &[0, 0]).is_err());
        assert!(log_det(&l, &[2]).is_err());
    }

    #[test]
    fn esp_values() {
        assert_eq!(elementary_symmetric(&[1.0, 2.0, 3.0], 3), vec![1.0, 6.0, 11.0, 6.0]);
        assert_eq!(elementary_symmetric(&[1.0, 2.0], 3), vec![1.0, 3.0, 2.0, 0.0]);
    }

    #[test]
    fn kernel_csv_header() {
        let k = build_joint_kernel(&DMatrix::identity(2, 2), &[1.0, 1.0], 0.5).unwrap();
        let mut out = Vec::new();
        k.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "2,0.5\n1.5,0\n0,1.5\n");
    }
}
