use nalgebra::DMatrix;

use super::{check_square, log_pivots, SelectionResult};
use crate::error::{Error, Result};

/// Greedy selection stops once no remaining candidate has a conditional
/// variance above this.
pub const EPS_PD: f64 = 1e-10;

/// Largest number of subsets [`exhaustive_map`] will enumerate.
pub const EXHAUSTIVE_GUARD: u64 = 1_000_000;

/// Rank-one downdates are buffered and applied to the stored kernel this
/// many at a time.
const DOWNDATE_BLOCK: usize = 8;

/// Greedy log-determinant maximisation.
///
/// Maintains the full conditional kernel `C = L − L_{:,Y} L_YY⁻¹ L_{Y,:}`.
/// Its diagonal is every candidate's Schur complement, so the next pick is
/// the largest diagonal entry (lowest index on ties) and the gain is its
/// log. Adding `j` is the rank-one downdate `C ← C − u uᵀ` with
/// `u = c_j / √C_jj`: `O(N²)` per step and `O(kN²)` overall.
///
/// The diagonal and the chosen column are kept exact at every step; the
/// downdates to the rest of `C` are applied in blocks so each row is
/// streamed through cache once per block rather than once per step.
///
/// `l` is assumed symmetric; only its lower triangle is read. Returns fewer
/// than `k` indices if every remaining conditional variance drops to
/// [`EPS_PD`] or below.
pub fn greedy_map(l: &DMatrix<f64>, k: usize) -> Result<SelectionResult> {
    let n = check_square(l)?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "subset size must lie in 1..={n}, got {k}"
        )));
    }
    if let Some(index) = l.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }

    // Row-major lower triangle (`c ≤ r`, stride `n`); the column-major
    // storage of a symmetric matrix reads the same either way.
    let mut stored: Vec<f64> = l.as_slice().to_vec();
    let mut diag: Vec<f64> = (0..n).map(|i| l[(i, i)]).collect();
    let mut taken = vec![false; n];
    let mut pending: Vec<Vec<f64>> = Vec::with_capacity(DOWNDATE_BLOCK);
    let mut indices = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);

    for _ in 0..k {
        let mut best_pos = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in diag.iter().enumerate() {
            if !taken[i] && d > best {
                best = d;
                best_pos = i;
            }
        }
        if !(best > EPS_PD) {
            break;
        }
        let j = best_pos;
        indices.push(j);
        gains.push(best.ln());
        taken[j] = true;

        let mut u: Vec<f64> = (0..n)
            .map(|i| if i <= j { stored[j * n + i] } else { stored[i * n + j] })
            .collect();
        for v in &pending {
            let f = v[j];
            if f != 0.0 {
                for (x, y) in u.iter_mut().zip(v) {
                    *x -= f * y;
                }
            }
        }
        let scale = 1.0 / best.sqrt();
        for (x, d) in u.iter_mut().zip(diag.iter_mut()) {
            *x *= scale;
            *d -= *x * *x;
        }
        pending.push(u);

        if pending.len() == DOWNDATE_BLOCK && indices.len() < k {
            for r in 0..n {
                let row = &mut stored[r * n..=r * n + r];
                for v in &pending {
                    let f = v[r];
                    if f != 0.0 {
                        for (x, y) in row.iter_mut().zip(&v[..=r]) {
                            *x -= f * y;
                        }
                    }
                }
            }
            pending.clear();
        }
    }

    let logdet = gains.iter().sum();
    Ok(SelectionResult {
        indices,
        gains,
        logdet,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Exact `argmax_{|Y| = k} log det(L_Y)` by enumeration in lexicographic
/// order; ties keep the lexicographically smallest set.
pub fn exhaustive_map(l: &DMatrix<f64>, k: usize) -> Result<SelectionResult> {
    let n = check_square(l)?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "subset size must lie in 1..={n}, got {k}"
        )));
    }
    if binomial(n, k) > EXHAUSTIVE_GUARD as u128 {
        return Err(Error::CombinatorialGuard {
            n,
            k,
            guard: EXHAUSTIVE_GUARD,
        });
    }

    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    loop {
        let (value, pivots) = match log_pivots(l, &combo) {
            Some(p) => (p.iter().sum(), p),
            None => (f64::NEG_INFINITY, vec![f64::NEG_INFINITY; k]),
        };
        if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
            best = Some((value, combo.clone(), pivots));
        }

        // Advance to the next combination in lexicographic order.
        let mut i = k;
        while i > 0 && combo[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for t in i..k {
            combo[t] = combo[t - 1] + 1;
        }
    }

    let (logdet, indices, gains) = best.expect("at least one subset");
    Ok(SelectionResult {
        indices,
        gains,
        logdet,
    })
}
