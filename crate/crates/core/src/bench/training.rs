use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::env::{evaluate_policy, NoisyExpert, PolicyActor, StageChainConfig, StageChainEnv};
use super::metrics::{diversity_metric, redundancy_metric};
use crate::error::{Error, Result};
use crate::geometry::{
    encode_pool, kmeans_stage_labels, median, median_bandwidth, pairwise_distances,
    rbf_similarity, Embedding, SimilarityMatrix,
};
use crate::kernel::{build_joint_kernel, greedy_map, log_pivots, JointKernel, SelectionResult};
use crate::policy::{LinearSoftmaxPolicy, SequencePolicy};
use crate::replay::{mixed_sample, normalize_weights, WeightMode};
use crate::rng;
use crate::scoring::{composite_quality, QualityReport, QualityWeights, ReturnSource, ScoringOptions};
use crate::window_store::{ReplayBuffer, TrajectoryWindow, WindowRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Quality-weighted kernel, greedy MAP.
    Full,
    /// Top-k by quality score alone.
    QualityOnly,
    /// Greedy MAP on a kernel with every quality set to the pool mean.
    DiversityOnly,
    /// No prioritised subset: plain uniform replay.
    Uniform,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::QualityOnly,
        Variant::DiversityOnly,
        Variant::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::QualityOnly => "QUALITY_ONLY",
            Variant::DiversityOnly => "DIVERSITY_ONLY",
            Variant::Uniform => "UNIFORM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of FULL, QUALITY_ONLY, DIVERSITY_ONLY, UNIFORM"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise latent distance of the pool.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLabels {
    /// Use the labels stored with the transitions.
    Recorded,
    /// Cluster pool embeddings and use cluster ids.
    KMeans { clusters: usize },
}

/// Everything needed to turn a candidate pool into a subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub subset_size: usize,
    pub weights: QualityWeights,
    pub lambda: f64,
    pub bandwidth: Bandwidth,
    pub mc_passes: usize,
    pub gamma: f64,
    pub smoothing: f64,
    pub return_source: ReturnSource,
    pub stage_labels: StageLabels,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            subset_size: 15,
            weights: QualityWeights::default(),
            lambda: crate::kernel::DEFAULT_LAMBDA,
            bandwidth: Bandwidth::Median,
            mc_passes: 8,
            gamma: 0.99,
            smoothing: 0.0,
            return_source: ReturnSource::WindowReturn,
            stage_labels: StageLabels::Recorded,
        }
    }
}

/// A scored pool and the subset chosen from it.
#[derive(Clone, Debug)]
pub struct PoolSelection {
    pub pool: Vec<TrajectoryWindow>,
    pub embeddings: Vec<Embedding>,
    pub similarity: SimilarityMatrix,
    pub quality: QualityReport,
    pub kernel: JointKernel,
    /// Indices into `pool`, in selection order.
    pub result: SelectionResult,
}

impl PoolSelection {
    pub fn selected_refs(&self) -> Vec<WindowRef> {
        self.result
            .indices
            .iter()
            .map(|&i| self.pool[i].window_ref())
            .collect()
    }

    /// Diversity, redundancy and the fraction of members whose last step
    /// lies in `rare_stage`.
    pub fn subset_metrics(&self, rare_stage: u32) -> Result<SubsetMetrics> {
        let y = &self.result.indices;
        let diversity = diversity_metric(&self.similarity.restrict(y))?;
        let mut d = pairwise_distances(&self.embeddings);
        let tau = if d.is_empty() { 0.0 } else { 0.1 * median(&mut d) };
        let members: Vec<Embedding> = y.iter().map(|&i| self.embeddings[i].clone()).collect();
        let redundancy = redundancy_metric(&members, tau);
        let rare = y
            .iter()
            .filter(|&&i| self.pool[i].step_stages.last() == Some(&rare_stage))
            .count();
        Ok(SubsetMetrics {
            diversity,
            redundancy,
            rare_stage_rate: if y.is_empty() { 0.0 } else { rare as f64 / y.len() as f64 },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubsetMetrics {
    pub diversity: f64,
    pub redundancy: f64,
    pub rare_stage_rate: f64,
}

fn top_k(q: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn ordered_result(l: &JointKernel, indices: Vec<usize>) -> SelectionResult {
    let gains = log_pivots(&l.values, &indices)
        .unwrap_or_else(|| vec![f64::NEG_INFINITY; indices.len()]);
    SelectionResult {
        logdet: gains.iter().sum(),
        indices,
        gains,
    }
}

/// Scores, embeds and selects from `pool` according to `variant`.
///
/// `UNIFORM` draws a uniformly random subset of the same size (used only for
/// reporting subset metrics).
pub fn select_from_pool<P: SequencePolicy + ?Sized>(
    mut pool: Vec<TrajectoryWindow>,
    model: &P,
    options: &SelectionOptions,
    variant: Variant,
    seed: u64,
) -> Result<PoolSelection> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "selection needs a pool of at least two windows, got {n}"
        )));
    }
    let k = options.subset_size;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "subset size must lie in 1..={n}, got {k}"
        )));
    }
    let embeddings = encode_pool(&pool, model)?;
    if let StageLabels::KMeans { clusters } = options.stage_labels {
        let labels = kmeans_stage_labels(&embeddings, clusters.min(n), rng::derive(seed, 3))?;
        for (w, l) in pool.iter_mut().zip(labels) {
            w.stage_label = l;
        }
    }
    let sigma = match options.bandwidth {
        Bandwidth::Median => median_bandwidth(&embeddings)?,
        Bandwidth::Fixed(s) => s,
    };
    let similarity = rbf_similarity(&embeddings, sigma)?;
    let quality = composite_quality(
        &pool,
        &ScoringOptions {
            weights: options.weights,
            passes: options.mc_passes,
            gamma: options.gamma,
            smoothing: options.smoothing,
            return_source: options.return_source,
            seed: rng::derive(seed, 1),
        },
        model,
    )?;
    let mut q = quality.q();
    if variant == Variant::DiversityOnly {
        let mean = q.iter().sum::<f64>() / n as f64;
        q = vec![mean; n];
    }
    let kernel = build_joint_kernel(&similarity.values, &q, options.lambda)?;
    let result = match variant {
        Variant::Full | Variant::DiversityOnly => greedy_map(&kernel.values, k)?,
        Variant::QualityOnly => ordered_result(&kernel, top_k(&q, k)),
        Variant::Uniform => {
            let mut rng = rng::seeded(rng::derive(seed, 2));
            let picks = index::sample(&mut rng, n, k).into_vec();
            ordered_result(&kernel, picks)
        }
    };
    Ok(PoolSelection {
        pool,
        embeddings,
        similarity,
        quality,
        kernel,
        result,
    })
}

/// Configuration of one training run on StageChain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub env: StageChainConfig,
    pub selection: SelectionOptions,
    /// Window length `H`.
    pub window_len: usize,
    /// Candidate pool size `N`.
    pub pool_size: usize,
    /// Re-select every `refresh_period` gradient steps.
    pub refresh_period: usize,
    /// Mix ratio `η`.
    pub mix_ratio: f64,
    pub batch_size: usize,
    pub weight_mode: WeightMode,
    pub learning_rate: f64,
    pub feature_dim: usize,
    pub dropout_rate: f64,
    /// Buffer capacity in transitions.
    pub buffer_capacity: usize,
    /// Logged episodes from a mixed-competence behaviour policy.
    pub offline_episodes: usize,
    /// Online episodes collected by the learner (the episode budget).
    pub episodes: usize,
    pub updates_per_episode: usize,
    /// Probability of a uniformly random action while collecting.
    pub exploration: f64,
    pub target_return: f64,
    /// Evaluate every this many online episodes.
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            env: StageChainConfig::default(),
            selection: SelectionOptions::default(),
            window_len: 8,
            pool_size: 100,
            refresh_period: 500,
            mix_ratio: 0.7,
            batch_size: 32,
            weight_mode: WeightMode::MeanOne,
            learning_rate: 0.05,
            feature_dim: 16,
            dropout_rate: 0.1,
            buffer_capacity: 20_000,
            offline_episodes: 100,
            episodes: 200,
            updates_per_episode: 10,
            exploration: 0.1,
            target_return: 1.0,
            eval_interval: 20,
            eval_episodes: 50,
        }
    }
}

impl LoopConfig {
    /// A seconds-scale configuration for smoke tests and examples.
    pub fn tiny() -> Self {
        LoopConfig {
            selection: SelectionOptions {
                subset_size: 3,
                mc_passes: 4,
                ..SelectionOptions::default()
            },
            pool_size: 20,
            refresh_period: 50,
            offline_episodes: 20,
            episodes: 200,
            updates_per_episode: 5,
            eval_interval: 50,
            eval_episodes: 20,
            ..LoopConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.selection.weights.validate()?;
        if self.window_len == 0 {
            return bad("window_len must be positive".into());
        }
        if self.pool_size < 2 {
            return bad(format!("pool_size must be at least 2, got {}", self.pool_size));
        }
        let k = self.selection.subset_size;
        if k == 0 || k > self.pool_size {
            return bad(format!(
                "subset_size must lie in 1..=pool_size ({}), got {k}",
                self.pool_size
            ));
        }
        if self.refresh_period == 0 {
            return bad("refresh_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad(format!("mix_ratio must lie in [0, 1], got {}", self.mix_ratio));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("batch_size, eval_interval and eval_episodes must be positive".into());
        }
        if self.selection.mc_passes < 2 {
            return bad(format!("mc_passes must be at least 2, got {}", self.selection.mc_passes));
        }
        if !(self.selection.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.selection.lambda));
        }
        if let Bandwidth::Fixed(s) = self.selection.bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("bandwidth must be positive, got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return bad(format!("exploration must lie in [0, 1], got {}", self.exploration));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        Ok(())
    }
}

/// Why a selection was (re)computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshReason {
    /// No live selected windows (first step, or all evicted).
    Empty,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionEvent {
    pub step: usize,
    pub reason: RefreshReason,
    #[serde(rename = "Y")]
    pub selected: Vec<WindowRef>,
    pub logdet: f64,
    #[serde(flatten)]
    pub metrics: SubsetMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsPoint {
    /// Gradient steps taken so far.
    pub step: usize,
    /// Online episodes collected so far.
    pub episodes: usize,
    pub success: f64,
    /// Mean subset metrics over selections made so far.
    pub diversity: f64,
    pub redundancy: f64,
    pub rare_stage_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub points: Vec<MetricsPoint>,
    /// Subset metrics at every refresh, including `UNIFORM`'s random
    /// reference subsets.
    pub snapshots: Vec<SubsetMetrics>,
}

impl RunMetrics {
    pub fn final_success(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.success)
    }

    fn mean_of(&self, f: impl Fn(&SubsetMetrics) -> f64) -> f64 {
        if self.snapshots.is_empty() {
            return f64::NAN;
        }
        self.snapshots.iter().map(f).sum::<f64>() / self.snapshots.len() as f64
    }

    pub fn mean_diversity(&self) -> f64 {
        self.mean_of(|s| s.diversity)
    }

    pub fn mean_redundancy(&self) -> f64 {
        self.mean_of(|s| s.redundancy)
    }

    pub fn mean_rare_stage_rate(&self) -> f64 {
        self.mean_of(|s| s.rare_stage_rate)
    }
}

/// Streaming hooks for long runs.
pub trait LoopObserver {
    fn on_selection(&mut self, _event: &SelectionEvent) -> Result<()> {
        Ok(())
    }

    fn on_metrics(&mut self, _point: &MetricsPoint) -> Result<()> {
        Ok(())
    }
}

impl LoopObserver for () {}

// Seed streams.
const POLICY_STREAM: u64 = 1;
const OFFLINE_STREAM: u64 = 2;
const COLLECT_STREAM: u64 = 3;
const POOL_STREAM: u64 = 4;
const BATCH_STREAM: u64 = 5;
const EVAL_STREAM: u64 = 6;

pub fn run_e2dt_loop(config: &LoopConfig, variant: Variant, seed: u64) -> Result<RunMetrics> {
    run_e2dt_loop_with(config, variant, seed, &mut ())
}

/// Offline logs, then alternating collection and prioritised replay updates.
///
/// All variants share the same offline data and evaluation seeds for a
/// given run seed.
pub fn run_e2dt_loop_with<O: LoopObserver + ?Sized>(
    config: &LoopConfig,
    variant: Variant,
    seed: u64,
    observer: &mut O,
) -> Result<RunMetrics> {
    config.validate()?;
    let env = StageChainEnv::new(config.env.clone())?;
    let rare_stage = env.rare_stage();
    let mut policy = LinearSoftmaxPolicy::new(
        env.state_dim(),
        config.feature_dim,
        env.action_count(),
        config.dropout_rate,
        rng::derive(seed, POLICY_STREAM),
    )?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, config.selection.gamma)?;

    let offline_seed = rng::derive(seed, OFFLINE_STREAM);
    let mut competence_rng = rng::seeded(offline_seed);
    for e in 0..config.offline_episodes {
        let mut behaviour = NoisyExpert {
            env: &env,
            competence: competence_rng.gen::<f64>(),
        };
        let id = buffer.next_episode_id();
        let (episode, _) = env.rollout(&mut behaviour, id, rng::derive(offline_seed, e as u64 + 1))?;
        buffer.append_episode(episode)?;
    }

    let mut metrics = RunMetrics {
        variant,
        seed,
        points: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut selected: Vec<WindowRef> = Vec::new();
    let mut step = 0usize;
    let h = config.window_len;
    let eta = if variant == Variant::Uniform { 0.0 } else { config.mix_ratio };
    let collect_seed = rng::derive(seed, COLLECT_STREAM);
    let pool_seed = rng::derive(seed, POOL_STREAM);
    let batch_seed = rng::derive(seed, BATCH_STREAM);
    let eval_seed = rng::derive(seed, EVAL_STREAM);

    for episode in 0..config.episodes {
        let mut actor = PolicyActor::sampling(&policy, config.target_return, config.exploration);
        let id = buffer.next_episode_id();
        let (ep, _) = env.rollout(&mut actor, id, rng::derive(collect_seed, episode as u64))?;
        buffer.append_episode(ep)?;

        for _ in 0..config.updates_per_episode {
            let live = buffer.window_indices(&selected, h);
            let empty = live.is_empty();
            let periodic = step.is_multiple_of(config.refresh_period);
            if (variant != Variant::Uniform && (empty || periodic))
                || (variant == Variant::Uniform && periodic)
            {
                let pool_s = rng::derive(pool_seed, step as u64);
                let pool = buffer.sample_candidate_pool(config.pool_size, h, pool_s)?;
                if pool.len() < 2 || pool.len() < config.selection.subset_size {
                    return Err(Error::NoValidWindows { horizon: h });
                }
                let sel = select_from_pool(pool, &policy, &config.selection, variant, pool_s)?;
                let m = sel.subset_metrics(rare_stage)?;
                metrics.snapshots.push(m);
                if variant != Variant::Uniform {
                    selected = sel.selected_refs();
                    observer.on_selection(&SelectionEvent {
                        step,
                        reason: if empty { RefreshReason::Empty } else { RefreshReason::Periodic },
                        selected: selected.clone(),
                        logdet: sel.result.logdet,
                        metrics: m,
                    })?;
                }
            }

            let live = if variant == Variant::Uniform {
                Vec::new()
            } else {
                buffer.window_indices(&selected, h)
            };
            let d = buffer.window_count(h);
            let batch = mixed_sample(
                &live,
                d,
                config.batch_size,
                eta,
                rng::derive(batch_seed, step as u64),
            )?;
            let batch = normalize_weights(batch, config.weight_mode);
            let windows = batch
                .window_indices()
                .into_iter()
                .map(|i| buffer.window_at(i, h))
                .collect::<Result<Vec<_>>>()?;
            policy.weighted_update(&windows, &batch.weights(), config.learning_rate)?;
            step += 1;
        }

        let done = episode + 1;
        if done % config.eval_interval == 0 || done == config.episodes {
            let mut actor = PolicyActor::greedy(&policy, config.target_return);
            let success = evaluate_policy(
                &mut actor,
                &env,
                config.eval_episodes,
                rng::derive(eval_seed, done as u64),
            )?;
            let point = MetricsPoint {
                step,
                episodes: done,
                success,
                diversity: metrics.mean_diversity(),
                redundancy: metrics.mean_redundancy(),
                rare_stage_rate: metrics.mean_rare_stage_rate(),
            };
            observer.on_metrics(&point)?;
            metrics.points.push(point);
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_breaks_ties_low() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.9], 3), vec![1, 3, 0]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("BEST".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LoopConfig::default().validate().is_ok());
        let mut c = LoopConfig::tiny();
        c.selection.subset_size = 21;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = LoopConfig::tiny();
        c.mix_ratio = 1.5;
        assert!(c.validate().is_err());
    }
}
