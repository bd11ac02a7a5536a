//! Return quantile, MC-dropout uncertainty and stage rarity for a pool.

use dpp_replay::bench::{NoisyExpert, StageChainConfig, StageChainEnv};
use dpp_replay::policy::LinearSoftmaxPolicy;
use dpp_replay::scoring::{composite_quality, ScoringOptions};
use dpp_replay::window_store::ReplayBuffer;

fn main() -> dpp_replay::Result<()> {
    let env = StageChainEnv::new(StageChainConfig::default())?;
    let mut buffer = ReplayBuffer::new(50_000, 0.99)?;
    for e in 0..30u64 {
        let mut actor = NoisyExpert {
            env: &env,
            competence: e as f64 / 30.0,
        };
        let (episode, _) = env.rollout(&mut actor, e, e)?;
        buffer.append_episode(episode)?;
    }

    let pool = buffer.sample_candidate_pool(12, 8, 7)?;
    let mut policy = LinearSoftmaxPolicy::new(env.state_dim(), 12, env.action_count(), 0.2, 1)?;
    // Non-zero head weights so dropout actually perturbs the output.
    let params: Vec<f64> = (0..policy.parameters().len())
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5)
        .collect();
    policy.set_parameters(&params)?;

    let options = ScoringOptions {
        seed: 11,
        ..ScoringOptions::default()
    };
    let report = composite_quality(&pool, &options, &policy)?;
    println!("window          stage  rtg_q   u_norm  rho     q");
    for (w, row) in pool.iter().zip(&report.rows) {
        println!(
            "ep {:>3} t {:>3}  {:>5}  {:.3}   {:.3}   {:.3}   {:.3}",
            w.episode_id,
            w.start,
            w.stage_label,
            row.rtg_quantile,
            row.uncertainty_norm,
            row.coverage,
            row.q
        );
    }
    println!();
    report.write_csv(std::io::stdout().lock())
}
