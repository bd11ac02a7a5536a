//! Exact k-DPP probabilities and sampling at verification scale.
//!
//! `P(Y) = det(L_Y) / e_k(λ_1, …, λ_N)` for `|Y| = k`. Sampling follows the
//! spectral two-phase procedure: pick `k` eigenvectors with probabilities
//! driven by the elementary symmetric polynomials, then draw items one at a
//! time from the projection onto the span of the remaining vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use super::{check_square, check_subset, elementary_symmetric};
use crate::error::{Error, Result};
use crate::rng;

pub const SUBSET_PROB_MAX_N: usize = 20;
pub const SAMPLER_MAX_N: usize = 64;

/// Eigenvalues at or below this are treated as exact zeros.
const RANK_TOL: f64 = 1e-10;

fn spectrum(l: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(l.clone());
    for v in eig.eigenvalues.iter_mut() {
        if *v <= RANK_TOL {
            *v = 0.0;
        }
    }
    eig
}

pub fn kdpp_subset_probability(l: &DMatrix<f64>, subset: &[usize]) -> Result<f64> {
    let n = check_square(l)?;
    if n > SUBSET_PROB_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact subset probability is limited to N <= {SUBSET_PROB_MAX_N}, got {n}"
        )));
    }
    check_subset(n, subset)?;
    let k = subset.len();
    let eig = spectrum(l);
    let e_k = elementary_symmetric(eig.eigenvalues.as_slice(), k)[k];
    if !(e_k > 0.0) {
        return Err(Error::RankDeficient {
            k,
            rank: eig.eigenvalues.iter().filter(|v| **v > 0.0).count(),
        });
    }
    let sub = DMatrix::from_fn(k, k, |r, c| l[(subset[r], subset[c])]);
    let det = if k == 0 { 1.0 } else { sub.determinant() };
    Ok((det / e_k).clamp(0.0, 1.0))
}

/// One exact draw from the k-DPP with kernel `l`; indices sorted ascending.
pub fn kdpp_sample(l: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = check_square(l)?;
    if n > SAMPLER_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact sampling is limited to N <= {SAMPLER_MAX_N}, got {n}"
        )));
    }
    let eig = spectrum(l);
    let lambdas = eig.eigenvalues.as_slice();
    let rank = lambdas.iter().filter(|v| **v > 0.0).count();
    if k > rank {
        return Err(Error::RankDeficient { k, rank });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng::seeded(seed);

    // table[l][m] = e_l(λ_1..λ_m)
    let mut table = vec![vec![0.0; n + 1]; k + 1];
    table[0].iter_mut().for_each(|v| *v = 1.0);
    for l_ in 1..=k {
        for m in 1..=n {
            table[l_][m] = table[l_][m - 1] + lambdas[m - 1] * table[l_ - 1][m - 1];
        }
    }

    let mut chosen = Vec::with_capacity(k);
    let mut remaining = k;
    for m in (1..=n).rev() {
        if remaining == 0 {
            break;
        }
        let p = lambdas[m - 1] * table[remaining - 1][m - 1] / table[remaining][m];
        if rng.gen::<f64>() < p {
            chosen.push(m - 1);
            remaining -= 1;
        }
    }
    if remaining != 0 {
        return Err(Error::Numerical(
            "eigenvector selection did not reach k vectors".into(),
        ));
    }

    let mut basis: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
        .collect();
    let mut out = Vec::with_capacity(k);
    while !basis.is_empty() {
        let weights: Vec<f64> = (0..n)
            .map(|i| basis.iter().map(|v| v[i] * v[i]).sum())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut item = n - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                item = i;
                break;
            }
            u -= w;
        }
        out.push(item);

        // Eliminate the item's coordinate using the vector with the largest
        // component there, then re-orthonormalise.
        let pivot = (0..basis.len())
            .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()))
            .expect("non-empty basis");
        let pv = basis.swap_remove(pivot);
        for v in &mut basis {
            let f = v[item] / pv[item];
            for (x, p) in v.iter_mut().zip(&pv) {
                *x -= f * p;
            }
        }
        for a in 0..basis.len() {
            for b in 0..a {
                let dot: f64 = basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum();
                let (head, tail) = basis.split_at_mut(a);
                for (x, y) in tail[0].iter_mut().zip(&head[b]) {
                    *x -= dot * y;
                }
            }
            let norm = basis[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            basis[a].iter_mut().for_each(|x| *x /= norm);
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn subset_probability_examples() {
        let l = diag(&[1.0, 2.0, 3.0]);
        assert!((kdpp_subset_probability(&l, &[2]).unwrap() - 0.5).abs() < 1e-12);
        assert!((kdpp_subset_probability(&l, &[1, 2]).unwrap() - 6.0 / 11.0).abs() < 1e-12);
        let id = DMatrix::<f64>::identity(3, 3);
        for y in [[0, 1], [0, 2], [1, 2]] {
            assert!((kdpp_subset_probability(&id, &y).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(kdpp_subset_probability(&l, &[3]).is_err());
    }

    #[test]
    fn sampler_degenerate_cases() {
        for seed in 0..20 {
            assert_eq!(kdpp_sample(&diag(&[1.0, 1.0, 1.0]), 3, seed).unwrap(), vec![0, 1, 2]);
            assert_eq!(kdpp_sample(&diag(&[1.0, 0.0, 1.0]), 2, seed).unwrap(), vec![0, 2]);
        }
        assert!(matches!(
            kdpp_sample(&diag(&[1.0, 0.0, 1.0]), 3, 0),
            Err(Error::RankDeficient { k: 3, rank: 2 })
        ));
    }

    #[test]
    fn sampler_matches_singleton_probabilities() {
        let l = diag(&[1.0, 2.0, 3.0]);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for seed in 0..draws {
            counts[kdpp_sample(&l, 1, seed as u64).unwrap()[0]] += 1;
        }
        for (i, expected) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            let freq = counts[i] as f64 / draws as f64;
            assert!((freq - expected).abs() < 0.01, "item {i}: {freq} vs {expected}");
        }
    }
}
