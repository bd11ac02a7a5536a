//! The linear-softmax sequence policy: training, encoding, MC dropout and
//! a finite-difference check of its gradient.

use dpp_replay::policy::{LinearSoftmaxPolicy, SequencePolicy};
use dpp_replay::window_store::{Episode, ReplayBuffer, Transition};
use rand::Rng;

fn main() -> dpp_replay::Result<()> {
    let mut rng = dpp_replay::rng::seeded(5);
    let mut buffer = ReplayBuffer::new(10_000, 0.99)?;
    for e in 0..20u64 {
        let transitions = (0..10)
            .map(|t| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                Transition {
                    state: vec![x, x * x],
                    action: vec![if x > 0.0 { 2.0 } else { 0.0 }],
                    reward: 0.0,
                    stage_label: None,
                    done: t == 9,
                }
            })
            .collect();
        buffer.append_episode(Episode::new(e, transitions)?)?;
    }
    let h = 5;
    let windows: Vec<_> = (0..buffer.window_count(h))
        .map(|i| buffer.window_at(i, h))
        .collect::<dpp_replay::Result<_>>()?;
    let weights = vec![1.0; windows.len()];

    let mut policy = LinearSoftmaxPolicy::new(2, 8, 3, 0.2, 9)?;
    for epoch in 0..=200 {
        let loss = policy.weighted_update(&windows, &weights, 0.01)?;
        if epoch % 50 == 0 {
            println!("epoch {epoch:>3}: loss per step {:.4}", loss / (windows.len() * h) as f64);
        }
    }
    println!("P(a | x = 0.8) = {:.3?}", policy.action_probabilities(&[0.8, 0.64], 0.0)?);
    println!("embedding of window 0: {:.3?}", policy.encode(&windows[0])?.0);
    let passes: Vec<Vec<f64>> = (1..=3)
        .map(|s| policy.predict_mean(&windows[0], s))
        .collect::<dpp_replay::Result<_>>()?;
    println!("three dropout passes: {passes:.3?}");

    let (_, grad) = policy.loss_and_gradient(&windows[..4], &weights[..4])?;
    let params = policy.parameters().to_vec();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for p in [0, 5, 17, params.len() - 1] {
        let mut probe = policy.clone();
        let mut up = params.clone();
        up[p] += eps;
        probe.set_parameters(&up)?;
        let (lp, _) = probe.loss_and_gradient(&windows[..4], &weights[..4])?;
        up[p] -= 2.0 * eps;
        probe.set_parameters(&up)?;
        let (lm, _) = probe.loss_and_gradient(&windows[..4], &weights[..4])?;
        let numeric = (lp - lm) / (2.0 * eps);
        worst = worst.max((numeric - grad[p]).abs() / numeric.abs().max(grad[p].abs()).max(1e-6));
    }
    println!("finite-difference check: max relative error {worst:.2e}");
    Ok(())
}
