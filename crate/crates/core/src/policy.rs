//! Sequence-policy interface and a linear-softmax stand-in model.
//!
//! Selection only needs four things from the policy: a deterministic window
//! encoder, a stochastic forward pass for MC-dropout, per-step action
//! log-likelihoods, and an importance-weighted update. [`SequencePolicy`]
//! captures exactly that, so a real transformer can be dropped in later.
//!
//! [`LinearSoftmaxPolicy`] works on per-step inputs `x = [state, rtg]`:
//!
//! ```text
//! z   = P x                      (fixed projection, feature_dim rows)
//! h   = [z, rtg * z, 1]          (head features)
//! π   = softmax(Wᵀ h)            (discrete actions)
//! enc = mean over window steps of z
//! ```
//!
//! The `rtg * z` block lets a linear head change its action preferences with
//! the return it is conditioned on.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Embedding;
use crate::rng;
use crate::window_store::TrajectoryWindow;

/// Model contract required by the selection pipeline.
pub trait SequencePolicy {
    /// Dimension of [`SequencePolicy::encode`] outputs.
    fn embedding_dim(&self) -> usize;

    /// Deterministic latent embedding of a whole window (no dropout).
    fn encode(&self, window: &TrajectoryWindow) -> Result<Embedding>;

    /// One stochastic forward pass; the action-mean vector averaged over the
    /// window's steps. Deterministic for a fixed `(window, pass_seed)`.
    fn predict_mean(&self, window: &TrajectoryWindow, pass_seed: u64) -> Result<Vec<f64>>;

    /// `log π(a_step | window prefix)` for the action recorded at `step`.
    fn action_log_prob(&self, window: &TrajectoryWindow, step: usize) -> Result<f64>;

    /// One gradient step on `Σ_i ω_i Σ_j −log π(a_ij | ·)`. Returns the loss
    /// before the step.
    fn weighted_update(
        &mut self,
        batch: &[TrajectoryWindow],
        weights: &[f64],
        learning_rate: f64,
    ) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmaxPolicy {
    state_dim: usize,
    feature_dim: usize,
    action_count: usize,
    /// `feature_dim × (state_dim + 1)`, row-major.
    projection: Vec<f64>,
    /// `head_dim × action_count`, row-major.
    weights: Vec<f64>,
    dropout_rate: f64,
}

const FORMAT: &str = "dpp-replay-linear-softmax";
const VERSION: u32 = 1;

impl LinearSoftmaxPolicy {
    /// Random Gaussian projection (seeded, scaled by `1/√(state_dim+1)`) and
    /// zero head weights, i.e. a uniform initial policy.
    pub fn new(
        state_dim: usize,
        feature_dim: usize,
        action_count: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let input_dim = state_dim + 1;
        let scale = 1.0 / (input_dim as f64).sqrt();
        let mut rng = rng::seeded(seed);
        let projection = (0..feature_dim * input_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::with_projection(state_dim, feature_dim, projection, action_count, dropout_rate)
    }

    /// Identity feature map: embeddings are the raw `[state, rtg]` means.
    pub fn identity(state_dim: usize, action_count: usize, dropout_rate: f64) -> Result<Self> {
        let d = state_dim + 1;
        let mut projection = vec![0.0; d * d];
        for i in 0..d {
            projection[i * d + i] = 1.0;
        }
        Self::with_projection(state_dim, d, projection, action_count, dropout_rate)
    }

    pub fn with_projection(
        state_dim: usize,
        feature_dim: usize,
        projection: Vec<f64>,
        action_count: usize,
        dropout_rate: f64,
    ) -> Result<Self> {
        if action_count == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature and action dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        if projection.len() != feature_dim * (state_dim + 1) {
            return Err(Error::DimensionMismatch {
                expected: feature_dim * (state_dim + 1),
                found: projection.len(),
            });
        }
        let head_dim = 2 * feature_dim + 1;
        Ok(LinearSoftmaxPolicy {
            state_dim,
            feature_dim,
            action_count,
            projection,
            weights: vec![0.0; head_dim * action_count],
            dropout_rate,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn head_dim(&self) -> usize {
        2 * self.feature_dim + 1
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Head weights, `head_dim × action_count` row-major.
    pub fn parameters(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: params.len(),
            });
        }
        self.weights.copy_from_slice(params);
        Ok(())
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                found: state.len(),
            });
        }
        Ok(())
    }

    fn features(&self, state: &[f64], rtg: f64) -> Vec<f64> {
        let d = self.state_dim + 1;
        (0..self.feature_dim)
            .map(|r| {
                let row = &self.projection[r * d..(r + 1) * d];
                row[..self.state_dim]
                    .iter()
                    .zip(state)
                    .map(|(p, s)| p * s)
                    .sum::<f64>()
                    + row[self.state_dim] * rtg
            })
            .collect()
    }

    fn head(&self, state: &[f64], rtg: f64) -> Vec<f64> {
        let z = self.features(state, rtg);
        let mut h = Vec::with_capacity(self.head_dim());
        h.extend_from_slice(&z);
        h.extend(z.iter().map(|v| rtg * v));
        h.push(1.0);
        h
    }

    fn logits(&self, head: &[f64]) -> Vec<f64> {
        let a = self.action_count;
        let mut out = vec![0.0; a];
        for (hi, row) in head.iter().zip(self.weights.chunks_exact(a)) {
            if *hi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += hi * w;
            }
        }
        out
    }

    /// Action distribution for a single step conditioned on `rtg`.
    pub fn action_probabilities(&self, state: &[f64], rtg: f64) -> Result<Vec<f64>> {
        self.check_state(state)?;
        Ok(softmax(&self.logits(&self.head(state, rtg))))
    }

    /// Most likely action, lowest index on ties.
    pub fn greedy_action(&self, state: &[f64], rtg: f64) -> Result<usize> {
        let probs = self.action_probabilities(state, rtg)?;
        Ok(argmax(&probs))
    }

    fn step_action(&self, window: &TrajectoryWindow, step: usize) -> Result<usize> {
        let action = &window.actions[step];
        match action.as_slice() {
            [a] if *a >= 0.0 && a.fract() == 0.0 && (*a as usize) < self.action_count => {
                Ok(*a as usize)
            }
            _ => Err(Error::InvalidArgument(format!(
                "window {}:{} step {step}: action {action:?} is not a discrete index below {}",
                window.episode_id, window.start, self.action_count
            ))),
        }
    }

    /// Weighted negative log-likelihood and its gradient with respect to the
    /// head weights.
    pub fn loss_and_gradient(
        &self,
        batch: &[TrajectoryWindow],
        weights: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                found: weights.len(),
            });
        }
        let a = self.action_count;
        let mut grad = vec![0.0; self.weights.len()];
        let mut loss = 0.0;
        for (window, &omega) in batch.iter().zip(weights) {
            if !(omega.is_finite() && omega >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "importance weight {omega} is not a finite non-negative value"
                )));
            }
            for step in 0..window.horizon {
                self.check_state(&window.states[step])?;
                let target = self.step_action(window, step)?;
                let head = self.head(&window.states[step], window.rtg[step]);
                let logits = self.logits(&head);
                let lse = log_sum_exp(&logits);
                loss += omega * (lse - logits[target]);
                let mut delta: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
                delta[target] -= 1.0;
                for (hi, grow) in head.iter().zip(grad.chunks_exact_mut(a)) {
                    let scale = omega * hi;
                    for (g, d) in grow.iter_mut().zip(&delta) {
                        *g += scale * d;
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PolicyFile {
            format: FORMAT.to_string(),
            version: VERSION,
            state_dim: self.state_dim,
            feature_dim: self.feature_dim,
            action_count: self.action_count,
            dropout_rate: self.dropout_rate,
            projection: self.projection.clone(),
            weights: self.weights.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported policy file {} v{}",
                file.format, file.version
            )));
        }
        let mut policy = Self::with_projection(
            file.state_dim,
            file.feature_dim,
            file.projection,
            file.action_count,
            file.dropout_rate,
        )?;
        policy.set_parameters(&file.weights)?;
        Ok(policy)
    }
}

impl SequencePolicy for LinearSoftmaxPolicy {
    fn embedding_dim(&self) -> usize {
        self.feature_dim
    }

    fn encode(&self, window: &TrajectoryWindow) -> Result<Embedding> {
        let mut acc = vec![0.0; self.feature_dim];
        for (state, &rtg) in window.states.iter().zip(&window.rtg) {
            self.check_state(state)?;
            for (a, z) in acc.iter_mut().zip(self.features(state, rtg)) {
                *a += z;
            }
        }
        let n = window.states.len().max(1) as f64;
        Ok(Embedding(acc.into_iter().map(|v| v / n).collect()))
    }

    fn predict_mean(&self, window: &TrajectoryWindow, pass_seed: u64) -> Result<Vec<f64>> {
        let keep = 1.0 - self.dropout_rate;
        let mut rng = rng::seeded(pass_seed);
        let mut mean = vec![0.0; self.action_count];
        for (state, &rtg) in window.states.iter().zip(&window.rtg) {
            self.check_state(state)?;
            let mut head = self.head(state, rtg);
            if self.dropout_rate > 0.0 {
                let last = head.len() - 1;
                for h in &mut head[..last] {
                    *h = if rng.gen::<f64>() < keep { *h / keep } else { 0.0 };
                }
            }
            for (m, l) in mean.iter_mut().zip(self.logits(&head)) {
                *m += l;
            }
        }
        let n = window.states.len().max(1) as f64;
        Ok(mean.into_iter().map(|v| v / n).collect())
    }

    fn action_log_prob(&self, window: &TrajectoryWindow, step: usize) -> Result<f64> {
        if step >= window.horizon {
            return Err(Error::InvalidArgument(format!(
                "step {step} outside window of length {}",
                window.horizon
            )));
        }
        self.check_state(&window.states[step])?;
        let target = self.step_action(window, step)?;
        let logits = self.logits(&self.head(&window.states[step], window.rtg[step]));
        Ok(logits[target] - log_sum_exp(&logits))
    }

    fn weighted_update(
        &mut self,
        batch: &[TrajectoryWindow],
        weights: &[f64],
        learning_rate: f64,
    ) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch, weights)?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss}")));
        }
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= learning_rate * g;
        }
        Ok(loss)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    state_dim: usize,
    feature_dim: usize,
    action_count: usize,
    dropout_rate: f64,
    projection: Vec<f64>,
    weights: Vec<f64>,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(states: Vec<Vec<f64>>, actions: Vec<usize>, rtg: Vec<f64>) -> TrajectoryWindow {
        let h = states.len();
        TrajectoryWindow {
            episode_id: 0,
            start: 0,
            horizon: h,
            states,
            actions: actions.into_iter().map(|a| vec![a as f64]).collect(),
            rewards: vec![0.0; h],
            rtg,
            stage_label: 0,
            step_stages: vec![0; h],
        }
    }

    #[test]
    fn identity_encoder_returns_raw_features() {
        let p = LinearSoftmaxPolicy::identity(3, 2, 0.0).unwrap();
        let w = window(vec![vec![1.0, -2.0, 0.5]], vec![0], vec![0.75]);
        assert_eq!(p.encode(&w).unwrap().0, vec![1.0, -2.0, 0.5, 0.75]);
        assert_eq!(p.encode(&w).unwrap(), p.encode(&w).unwrap());
    }

    #[test]
    fn zeroed_projection_column_hides_feature() {
        // Feature 1 of the state never reaches the embedding.
        let projection = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let p = LinearSoftmaxPolicy::with_projection(2, 2, projection, 2, 0.0).unwrap();
        let a = window(vec![vec![1.0, 5.0]], vec![0], vec![0.3]);
        let b = window(vec![vec![1.0, -7.0]], vec![0], vec![0.3]);
        assert_eq!(p.encode(&a).unwrap(), p.encode(&b).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_state_dim() {
        let p = LinearSoftmaxPolicy::new(3, 4, 2, 0.0, 1).unwrap();
        let w = window(vec![vec![1.0, 2.0]], vec![0], vec![0.0]);
        assert!(matches!(p.encode(&w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dropout_passes() {
        let w = window(vec![vec![1.0, 2.0], vec![0.5, -1.0]], vec![0, 1], vec![1.0, 0.9]);
        let mut p = LinearSoftmaxPolicy::new(2, 4, 3, 0.0, 7).unwrap();
        let params: Vec<f64> = (0..p.parameters().len()).map(|i| (i as f64 * 0.37).sin()).collect();
        p.set_parameters(&params).unwrap();
        assert_eq!(p.predict_mean(&w, 1).unwrap(), p.predict_mean(&w, 2).unwrap());

        let mut noisy = LinearSoftmaxPolicy::new(2, 4, 3, 0.5, 7).unwrap();
        noisy.set_parameters(&params).unwrap();
        assert_eq!(noisy.predict_mean(&w, 5).unwrap(), noisy.predict_mean(&w, 5).unwrap());
        let first = noisy.predict_mean(&w, 0).unwrap();
        assert!((1..20).any(|s| noisy.predict_mean(&w, s).unwrap() != first));

        let zero = LinearSoftmaxPolicy::new(2, 4, 3, 0.5, 7).unwrap();
        for s in 0..5 {
            assert!(zero.predict_mean(&w, s).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn log_probs_normalise() {
        let mut p = LinearSoftmaxPolicy::new(2, 3, 4, 0.0, 3).unwrap();
        let params: Vec<f64> = (0..p.parameters().len()).map(|i| (i as f64).cos()).collect();
        p.set_parameters(&params).unwrap();
        let total: f64 = (0..4)
            .map(|a| {
                let w = window(vec![vec![0.2, -0.4]], vec![a], vec![0.6]);
                p.action_log_prob(&w, 0).unwrap().exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = LinearSoftmaxPolicy::new(2, 3, 3, 0.0, 3).unwrap();
        let before = p.parameters().to_vec();
        let w = window(vec![vec![0.2, -0.4]], vec![1], vec![0.6]);
        let loss = p.weighted_update(&[w], &[1.0], 0.0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert_eq!(p.parameters(), before.as_slice());
    }

    #[test]
    fn doubling_weight_doubles_step() {
        let w = window(vec![vec![0.2, -0.4], vec![1.0, 0.3]], vec![1, 2], vec![0.6, 0.5]);
        let base = LinearSoftmaxPolicy::new(2, 3, 3, 0.0, 3).unwrap();
        let mut one = base.clone();
        let mut two = base.clone();
        one.weighted_update(std::slice::from_ref(&w), &[1.0], 0.1).unwrap();
        two.weighted_update(std::slice::from_ref(&w), &[2.0], 0.1).unwrap();
        for ((b, o), t) in base.parameters().iter().zip(one.parameters()).zip(two.parameters()) {
            let d1 = o - b;
            let d2 = t - b;
            assert!((d2 - 2.0 * d1).abs() <= 1e-15 * d1.abs().max(1.0));
        }
    }

    #[test]
    fn non_discrete_actions_are_rejected() {
        let p = LinearSoftmaxPolicy::new(1, 2, 2, 0.0, 1).unwrap();
        let mut w = window(vec![vec![0.0]], vec![0], vec![0.0]);
        w.actions[0] = vec![0.5];
        assert!(p.action_log_prob(&w, 0).is_err());
        w.actions[0] = vec![2.0];
        assert!(p.action_log_prob(&w, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut p = LinearSoftmaxPolicy::new(2, 3, 3, 0.2, 11).unwrap();
        let params: Vec<f64> = (0..p.parameters().len()).map(|i| i as f64 / 7.0).collect();
        p.set_parameters(&params).unwrap();
        let text = p.to_json().unwrap();
        assert!(text.starts_with(r#"{"format":"dpp-replay-linear-softmax","version":1"#));
        assert_eq!(LinearSoftmaxPolicy::from_json(&text).unwrap(), p);
    }
}
