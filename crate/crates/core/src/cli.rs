//! The `dpp-replay` command-line tool.
//!
//! Three subcommands share one flat TOML configuration file; command-line
//! flags override file keys.
//!
//! * `select` scores a JSON-lines buffer file and writes the chosen subset.
//! * `loop` trains on StageChain with one variant, streaming metrics.
//! * `ablate` runs all four variants over several seeds.
//!
//! Every output starts with provenance: CSV files carry a leading
//! `# config_hash=… seed=…` comment, JSON files carry `config_hash` and
//! `seed` fields, and the audit log starts with a header record.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{
    run_ablation, run_e2dt_loop_with, select_from_pool, Bandwidth, LoopConfig, LoopObserver,
    MetricsPoint, SelectionEvent, SelectionOptions, StageChainConfig, StageLabels, Variant,
};
use crate::error::{Error, Result};
use crate::policy::{LinearSoftmaxPolicy, SequencePolicy};
use crate::replay::{mixed_sample, WeightMode};
use crate::rng;
use crate::scoring::{QualityWeights, ReturnSource};
use crate::window_store::{ReplayBuffer, WindowRef};

#[derive(Debug, Parser)]
#[command(name = "dpp-replay", version, about = "Quality-diversity replay selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a buffer file and select a subset.
    Select(Flags),
    /// Train on StageChain with one variant.
    Loop(Flags),
    /// Compare FULL, QUALITY_ONLY, DIVERSITY_ONLY and UNIFORM.
    Ablate(Flags),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed; repeat for several seeds.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// FULL, QUALITY_ONLY, DIVERSITY_ONLY or UNIFORM.
    #[arg(long)]
    pub variant: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write the joint kernel (select only).
    #[arg(long)]
    pub kernel_dump: bool,
}

/// Flat configuration file. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON-lines buffer for `select`.
    pub buffer: Option<PathBuf>,
    /// Trained policy file for `select`; otherwise a fresh policy is fitted.
    pub policy: Option<PathBuf>,
    /// Uniform-replay gradient steps used to fit a fresh policy in `select`.
    pub fit_steps: usize,
    pub seeds: Vec<u64>,
    pub variant: Variant,

    pub window_len: usize,
    pub pool_size: usize,
    pub subset_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub lambda: f64,
    /// Fixed RBF bandwidth; the pool median distance when absent.
    pub bandwidth: Option<f64>,
    pub mc_passes: usize,
    pub gamma: f64,
    pub smoothing: f64,
    pub return_source: ReturnSource,
    /// Cluster embeddings into this many pseudo-stages instead of using
    /// recorded labels.
    pub stage_clusters: Option<usize>,

    pub refresh_period: usize,
    pub mix_ratio: f64,
    pub batch_size: usize,
    pub weight_mode: WeightMode,
    pub learning_rate: f64,
    pub feature_dim: usize,
    pub dropout_rate: f64,
    pub buffer_capacity: usize,
    pub offline_episodes: usize,
    pub episodes: usize,
    pub updates_per_episode: usize,
    pub exploration: f64,
    pub target_return: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,

    pub stage_lengths: Vec<usize>,
    pub action_count: usize,
    pub slip: f64,
    pub max_steps: usize,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let l = LoopConfig::default();
        let s = l.selection;
        RunConfig {
            buffer: None,
            policy: None,
            fit_steps: 200,
            seeds: vec![0, 1, 2, 3, 4],
            variant: Variant::Full,
            window_len: l.window_len,
            pool_size: l.pool_size,
            subset_size: s.subset_size,
            alpha: s.weights.alpha,
            beta: s.weights.beta,
            zeta: s.weights.zeta,
            lambda: s.lambda,
            bandwidth: None,
            mc_passes: s.mc_passes,
            gamma: s.gamma,
            smoothing: s.smoothing,
            return_source: s.return_source,
            stage_clusters: None,
            refresh_period: l.refresh_period,
            mix_ratio: l.mix_ratio,
            batch_size: l.batch_size,
            weight_mode: l.weight_mode,
            learning_rate: l.learning_rate,
            feature_dim: l.feature_dim,
            dropout_rate: l.dropout_rate,
            buffer_capacity: l.buffer_capacity,
            offline_episodes: l.offline_episodes,
            episodes: l.episodes,
            updates_per_episode: l.updates_per_episode,
            exploration: l.exploration,
            target_return: l.target_return,
            eval_interval: l.eval_interval,
            eval_episodes: l.eval_episodes,
            stage_lengths: l.env.stage_lengths,
            action_count: l.env.action_count,
            slip: l.env.slip,
            max_steps: l.env.max_steps,
            nuisance_dims: l.env.nuisance_dims,
            nuisance_scale: l.env.nuisance_scale,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Reads the file named by `flags` (if any) and applies flag overrides.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut config = match &flags.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        if !flags.seeds.is_empty() {
            config.seeds = flags.seeds.clone();
        }
        if let Some(v) = &flags.variant {
            config.variant = v.parse()?;
        }
        if config.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(config)
    }

    pub fn selection_options(&self) -> Result<SelectionOptions> {
        Ok(SelectionOptions {
            subset_size: self.subset_size,
            weights: QualityWeights::new(self.alpha, self.beta, self.zeta)
                .map_err(|e| Error::Config(e.to_string()))?,
            lambda: self.lambda,
            bandwidth: match self.bandwidth {
                Some(s) => Bandwidth::Fixed(s),
                None => Bandwidth::Median,
            },
            mc_passes: self.mc_passes,
            gamma: self.gamma,
            smoothing: self.smoothing,
            return_source: self.return_source,
            stage_labels: match self.stage_clusters {
                Some(clusters) => StageLabels::KMeans { clusters },
                None => StageLabels::Recorded,
            },
        })
    }

    pub fn loop_config(&self) -> Result<LoopConfig> {
        let config = LoopConfig {
            env: StageChainConfig {
                stage_lengths: self.stage_lengths.clone(),
                action_count: self.action_count,
                slip: self.slip,
                max_steps: self.max_steps,
                nuisance_dims: self.nuisance_dims,
                nuisance_scale: self.nuisance_scale,
            },
            selection: self.selection_options()?,
            window_len: self.window_len,
            pool_size: self.pool_size,
            refresh_period: self.refresh_period,
            mix_ratio: self.mix_ratio,
            batch_size: self.batch_size,
            weight_mode: self.weight_mode,
            learning_rate: self.learning_rate,
            feature_dim: self.feature_dim,
            dropout_rate: self.dropout_rate,
            buffer_capacity: self.buffer_capacity,
            offline_episodes: self.offline_episodes,
            episodes: self.episodes,
            updates_per_episode: self.updates_per_episode,
            exploration: self.exploration,
            target_return: self.target_return,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
        };
        config.validate()?;
        Ok(config)
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&canonical)
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn provenance(hash: &str, seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    format!("# config_hash={hash} seed={}", seeds.join(" "))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn action_count_of(buffer: &ReplayBuffer) -> Result<usize> {
    let mut max = None;
    for ep in buffer.episodes() {
        for t in &ep.transitions {
            let a = t.discrete_action().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "episode {}: action {:?} is not a discrete index",
                    ep.id, t.action
                ))
            })?;
            max = Some(max.map_or(a, |m: usize| m.max(a)));
        }
    }
    Ok(max.map_or(1, |m| m + 1).max(2))
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    config_hash: &'a str,
    seed: u64,
    variant: Variant,
    bandwidth: f64,
    pool: Vec<WindowRef>,
    indices: &'a [usize],
    gains: &'a [f64],
    logdet: f64,
    windows: Vec<WindowRef>,
}

/// Scores a buffer file and writes `selection.json`, `scores.csv` and,
/// with `kernel_dump`, `kernel.csv` under `out`.
pub fn cmd_select(config: &RunConfig, out: &Path, kernel_dump: bool) -> Result<()> {
    let seed = config.seeds[0];
    let path = config
        .buffer
        .as_ref()
        .ok_or_else(|| Error::Config("`buffer` must name a JSON-lines buffer file".into()))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let buffer = ReplayBuffer::read_jsonl(BufReader::new(file), config.buffer_capacity, config.gamma)?;
    let options = config.selection_options()?;
    let h = config.window_len;
    let total = buffer.window_count(h);
    if total == 0 {
        return Err(Error::NoValidWindows { horizon: h });
    }
    if total < 2 || total < options.subset_size {
        return Err(Error::Degenerate(format!(
            "buffer holds {total} windows of length {h}, fewer than subset_size = {}",
            options.subset_size
        )));
    }

    let policy = match &config.policy {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            LinearSoftmaxPolicy::from_json(&text)?
        }
        None => fit_policy(&buffer, config, seed)?,
    };
    let pool = buffer.sample_candidate_pool(config.pool_size, h, rng::derive(seed, 4))?;
    if pool.len() < options.subset_size {
        return Err(Error::Degenerate(format!(
            "candidate pool of {} is smaller than subset_size = {}",
            pool.len(),
            options.subset_size
        )));
    }
    let sel = select_from_pool(pool, &policy, &options, config.variant, rng::derive(seed, 4))?;

    let hash = config.hash();
    prepare_out(out)?;
    let file = SelectionFile {
        config_hash: &hash,
        seed,
        variant: config.variant,
        bandwidth: sel.similarity.bandwidth,
        pool: sel.pool.iter().map(|w| w.window_ref()).collect(),
        indices: &sel.result.indices,
        gains: &sel.result.gains,
        logdet: sel.result.logdet,
        windows: sel.selected_refs(),
    };
    let path = out.join("selection.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("scores.csv");
    let mut w = create(&path)?;
    writeln!(w, "{}", provenance(&hash, &[seed])).map_err(|e| Error::io(&path, e))?;
    sel.quality.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    if kernel_dump {
        let path = out.join("kernel.csv");
        let mut w = create(&path)?;
        writeln!(w, "{}", provenance(&hash, &[seed])).map_err(|e| Error::io(&path, e))?;
        sel.kernel.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Uniform-replay behaviour cloning so embeddings and dropout variance
/// reflect the buffer rather than a random head.
fn fit_policy(buffer: &ReplayBuffer, config: &RunConfig, seed: u64) -> Result<LinearSoftmaxPolicy> {
    let state_dim = buffer
        .state_dim()
        .ok_or_else(|| Error::Degenerate("buffer is empty".into()))?;
    let mut policy = LinearSoftmaxPolicy::new(
        state_dim,
        config.feature_dim,
        action_count_of(buffer)?,
        config.dropout_rate,
        rng::derive(seed, 1),
    )?;
    let h = config.window_len;
    let d = buffer.window_count(h);
    for step in 0..config.fit_steps {
        let batch = mixed_sample(&[], d, config.batch_size, 0.0, rng::derive(seed, 100 + step as u64))?;
        let windows = batch
            .window_indices()
            .into_iter()
            .map(|i| buffer.window_at(i, h))
            .collect::<Result<Vec<_>>>()?;
        policy.weighted_update(&windows, &batch.weights(), config.learning_rate)?;
    }
    Ok(policy)
}

const METRICS_HEADER: &str = "variant,seed,step,episodes,success,diversity,redundancy,rare_stage_rate";

struct StreamObserver<'a> {
    variant: Variant,
    seed: u64,
    metrics: &'a mut BufWriter<File>,
    audit: &'a mut BufWriter<File>,
}

fn write_metrics_row<W: Write>(w: &mut W, variant: Variant, seed: u64, p: &MetricsPoint) -> Result<()> {
    writeln!(
        w,
        "{variant},{seed},{},{},{},{},{},{}",
        p.step, p.episodes, p.success, p.diversity, p.redundancy, p.rare_stage_rate
    )
    .and_then(|_| w.flush())
    .map_err(|e| Error::io("metrics.csv", e))
}

impl LoopObserver for StreamObserver<'_> {
    fn on_selection(&mut self, event: &SelectionEvent) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            seed: u64,
            #[serde(flatten)]
            event: &'a SelectionEvent,
        }
        serde_json::to_writer(&mut *self.audit, &Record { seed: self.seed, event })?;
        writeln!(self.audit)
            .and_then(|_| self.audit.flush())
            .map_err(|e| Error::io("audit.jsonl", e))
    }

    fn on_metrics(&mut self, point: &MetricsPoint) -> Result<()> {
        write_metrics_row(self.metrics, self.variant, self.seed, point)
    }
}

/// Trains one variant per seed, writing `metrics.csv` (flushed per row) and
/// `audit.jsonl` (one record per selection) under `out`.
pub fn cmd_loop(config: &RunConfig, out: &Path) -> Result<()> {
    let loop_config = config.loop_config()?;
    let hash = config.hash();
    prepare_out(out)?;
    let mpath = out.join("metrics.csv");
    let apath = out.join("audit.jsonl");
    let mut metrics = create(&mpath)?;
    let mut audit = create(&apath)?;
    writeln!(metrics, "{}\n{METRICS_HEADER}", provenance(&hash, &config.seeds))
        .map_err(|e| Error::io(&mpath, e))?;
    serde_json::to_writer(
        &mut audit,
        &serde_json::json!({
            "config_hash": hash,
            "seed": config.seeds,
            "variant": config.variant,
        }),
    )?;
    writeln!(audit).map_err(|e| Error::io(&apath, e))?;

    for &seed in &config.seeds {
        let mut observer = StreamObserver {
            variant: config.variant,
            seed,
            metrics: &mut metrics,
            audit: &mut audit,
        };
        let run = run_e2dt_loop_with(&loop_config, config.variant, seed, &mut observer)?;
        println!(
            "{} seed {seed}: final success {:.3}, diversity {:.3}, redundancy {:.3}",
            config.variant,
            run.final_success(),
            run.mean_diversity(),
            run.mean_redundancy()
        );
    }
    Ok(())
}

/// Runs all four variants over every seed; writes `ablation.csv` and
/// `metrics.csv` under `out` and prints the table.
pub fn cmd_ablate(config: &RunConfig, out: &Path) -> Result<()> {
    let loop_config = config.loop_config()?;
    let table = run_ablation(&loop_config, &Variant::ALL, &config.seeds)?;
    let hash = config.hash();
    prepare_out(out)?;

    let path = out.join("ablation.csv");
    let mut w = create(&path)?;
    writeln!(w, "{}", provenance(&hash, &config.seeds)).map_err(|e| Error::io(&path, e))?;
    table.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("metrics.csv");
    let mut w = create(&path)?;
    writeln!(w, "{}\n{METRICS_HEADER}", provenance(&hash, &config.seeds))
        .map_err(|e| Error::io(&path, e))?;
    for row in &table.rows {
        for run in &row.runs {
            for p in &run.points {
                write_metrics_row(&mut w, run.variant, run.seed, p)?;
            }
        }
    }
    print!("{}", table.render());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Select(f) => cmd_select(&RunConfig::resolve(f)?, &f.out, f.kernel_dump),
        Command::Loop(f) => cmd_loop(&RunConfig::resolve(f)?, &f.out),
        Command::Ablate(f) => cmd_ablate(&RunConfig::resolve(f)?, &f.out),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml("pool_sise = 10"),
            Err(Error::Config(_))
        ));
        let c = RunConfig::from_toml("pool_size = 10\nvariant = \"QUALITY_ONLY\"").unwrap();
        assert_eq!(c.pool_size, 10);
        assert_eq!(c.variant, Variant::QualityOnly);
        assert_eq!(c.subset_size, RunConfig::default().subset_size);
    }

    #[test]
    fn flags_override_file() {
        let flags = Flags {
            seeds: vec![7, 8],
            variant: Some("uniform".into()),
            ..Flags::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.variant, Variant::Uniform);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
        let b = RunConfig {
            lambda: 2e-3,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = RunConfig {
            alpha: 0.9,
            ..RunConfig::default()
        };
        assert_eq!(c.loop_config().unwrap_err().exit_code(), 2);
    }
}
