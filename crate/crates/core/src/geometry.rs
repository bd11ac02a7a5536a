//! Latent-space geometry of a candidate pool.
//!
//! Windows are embedded with the policy encoder, compared with a Gaussian
//! kernel `S_ij = exp(−‖z_i − z_j‖² / σ²)`, where `σ` is the median pairwise
//! Euclidean distance (not the median squared distance). When the median is
//! zero the bandwidth falls back to 1, which turns an all-duplicate pool into
//! the all-ones matrix.

use std::io::Write;

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SequencePolicy;
use crate::rng;
use crate::window_store::TrajectoryWindow;

/// A window's latent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn squared_distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.squared_distance(other).sqrt()
    }
}

/// Symmetric RBF similarity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
    pub bandwidth: f64,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Principal submatrix on `indices`, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
            self.values[(indices[r], indices[c])]
        })
    }

    /// Row-major CSV, one matrix row per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.values, out)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    let io = |e| Error::io("<matrix csv>", e);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Embeds every window with the policy's deterministic encoder.
pub fn encode_pool<P: SequencePolicy + ?Sized>(
    pool: &[TrajectoryWindow],
    model: &P,
) -> Result<Vec<Embedding>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty pool".into()));
    }
    pool.iter().map(|w| model.encode(w)).collect()
}

fn check_dims(embeddings: &[Embedding]) -> Result<()> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    for (index, e) in embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        if e.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

/// All `N(N−1)/2` pairwise Euclidean distances, row-major upper triangle.
pub fn pairwise_distances(embeddings: &[Embedding]) -> Vec<f64> {
    let n = embeddings.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(embeddings[i].distance(&embeddings[j]));
        }
    }
    out
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median pairwise distance; 1 if that median is 0.
pub fn median_bandwidth(embeddings: &[Embedding]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidArgument(
            "median bandwidth needs at least two embeddings".into(),
        ));
    }
    check_dims(embeddings)?;
    let mut d = pairwise_distances(embeddings);
    let m = median(&mut d);
    Ok(if m > 0.0 { m } else { 1.0 })
}

pub fn rbf_similarity(embeddings: &[Embedding], bandwidth: f64) -> Result<SimilarityMatrix> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    check_dims(embeddings)?;
    let n = embeddings.len();
    let inv = 1.0 / (bandwidth * bandwidth);
    let mut values = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = (-embeddings[i].squared_distance(&embeddings[j]) * inv).exp();
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix { values, bandwidth })
}

/// Writes embeddings as JSON lines: `{"index":i,"embedding":[...]}`.
pub fn write_embeddings_jsonl<W: Write>(embeddings: &[Embedding], mut out: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        index: usize,
        embedding: &'a Embedding,
    }
    for (index, embedding) in embeddings.iter().enumerate() {
        serde_json::to_writer(&mut out, &Row { index, embedding })?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<embeddings>", e))?;
    }
    Ok(())
}

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

/// Lloyd's algorithm from a seeded k-means++ start. Labels lie in `0..k`.
pub fn kmeans_stage_labels(embeddings: &[Embedding], k: usize, seed: u64) -> Result<Vec<u32>> {
    let n = embeddings.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k-means with k = {k} exceeds the {n} points"
        )));
    }
    check_dims(embeddings)?;
    let mut rng = rng::seeded(seed);

    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![embeddings[first].clone()];
    let mut nearest: Vec<f64> = embeddings
        .iter()
        .map(|e| e.squared_distance(&embeddings[first]))
        .collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(&mut rng),
            // Remaining points all coincide with a centroid.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen[next] = true;
        for (d, e) in nearest.iter_mut().zip(embeddings) {
            *d = d.min(e.squared_distance(&embeddings[next]));
        }
        centroids.push(embeddings[next].clone());
    }

    let dim = embeddings[0].dim();
    let mut labels = vec![0u32; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (label, e) in labels.iter_mut().zip(embeddings) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = e.squared_distance(centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *label = best as u32;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&label, e) in labels.iter().zip(embeddings) {
            counts[label as usize] += 1;
            for (s, v) in sums[label as usize].iter_mut().zip(&e.0) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated = Embedding(sums[c].iter().map(|s| s / counts[c] as f64).collect());
            shift = shift.max(updated.distance(&centroids[c]));
            centroids[c] = updated;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(labels)
}
