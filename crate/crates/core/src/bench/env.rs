//! StageChain: a sparse-reward chain of sub-tasks with skewed stage lengths.
//!
//! The agent advances one position along the chain per successful step and
//! must pick the stage's correct action to do so. With probability `slip`
//! the executed action is replaced by a uniformly random one. Reaching the
//! end of the final stage pays reward 1 and ends the episode; otherwise the
//! episode is cut at `max_steps` with zero return.
//!
//! Observation layout: one-hot stage, progress within the stage, elapsed
//! time fraction, then `nuisance_dims` uniform noise features that carry no
//! task information.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::LinearSoftmaxPolicy;
use crate::rng::{self, Rng};
use crate::window_store::{Episode, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageChainConfig {
    pub stage_lengths: Vec<usize>,
    pub action_count: usize,
    pub slip: f64,
    pub max_steps: usize,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
}

impl Default for StageChainConfig {
    fn default() -> Self {
        StageChainConfig {
            stage_lengths: vec![12, 12, 12, 4],
            action_count: 6,
            slip: 0.1,
            max_steps: 60,
            nuisance_dims: 2,
            nuisance_scale: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageChainEnv {
    config: StageChainConfig,
    correct: Vec<usize>,
    stage_of: Vec<usize>,
    offset_in_stage: Vec<usize>,
}

/// Anything that can pick actions in the environment.
pub trait Actor {
    fn reset(&mut self) {}
    fn act(&mut self, state: &[f64], rng: &mut Rng) -> Result<usize>;
    fn observe_reward(&mut self, _reward: f64) {}
}

impl StageChainEnv {
    pub fn new(config: StageChainConfig) -> Result<Self> {
        if config.stage_lengths.is_empty() || config.stage_lengths.contains(&0) {
            return Err(Error::InvalidArgument(
                "every stage needs a positive length".into(),
            ));
        }
        if config.action_count < 2 {
            return Err(Error::InvalidArgument("need at least two actions".into()));
        }
        if !(0.0..=1.0).contains(&config.slip) {
            return Err(Error::InvalidArgument(format!(
                "slip probability must lie in [0, 1], got {}",
                config.slip
            )));
        }
        if config.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        let a = config.action_count;
        let correct = (0..config.stage_lengths.len())
            .map(|s| (5 * s + 2) % a)
            .collect();
        let mut stage_of = Vec::new();
        let mut offset_in_stage = Vec::new();
        for (s, &len) in config.stage_lengths.iter().enumerate() {
            for o in 0..len {
                stage_of.push(s);
                offset_in_stage.push(o);
            }
        }
        Ok(StageChainEnv {
            config,
            correct,
            stage_of,
            offset_in_stage,
        })
    }

    pub fn config(&self) -> &StageChainConfig {
        &self.config
    }

    pub fn num_stages(&self) -> usize {
        self.config.stage_lengths.len()
    }

    /// Index of the shortest, last sub-task.
    pub fn rare_stage(&self) -> u32 {
        (self.num_stages() - 1) as u32
    }

    pub fn chain_length(&self) -> usize {
        self.stage_of.len()
    }

    pub fn action_count(&self) -> usize {
        self.config.action_count
    }

    pub fn state_dim(&self) -> usize {
        self.num_stages() + 2 + self.config.nuisance_dims
    }

    pub fn correct_action(&self, stage: usize) -> usize {
        self.correct[stage]
    }

    /// Probability that choosing `action` in `stage` advances the chain.
    pub fn advance_probability(&self, stage: usize, action: usize) -> f64 {
        let slip = self.config.slip;
        let random_hit = slip / self.config.action_count as f64;
        if action == self.correct[stage] {
            1.0 - slip + random_hit
        } else {
            random_hit
        }
    }

    fn observe(&self, position: usize, t: usize, rng: &mut Rng) -> Vec<f64> {
        let stage = self.stage_of[position];
        let mut s = vec![0.0; self.state_dim()];
        s[stage] = 1.0;
        let n = self.num_stages();
        s[n] = self.offset_in_stage[position] as f64 / self.config.stage_lengths[stage] as f64;
        s[n + 1] = t as f64 / self.config.max_steps as f64;
        let scale = self.config.nuisance_scale;
        for v in &mut s[n + 2..] {
            *v = if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 };
        }
        s
    }

    /// Plays one episode. Returns the episode and whether it succeeded.
    pub fn rollout<A: Actor + ?Sized>(
        &self,
        actor: &mut A,
        episode_id: u64,
        seed: u64,
    ) -> Result<(Episode, bool)> {
        let mut rng = rng::seeded(seed);
        actor.reset();
        let mut position = 0;
        let mut transitions = Vec::new();
        let mut success = false;
        for t in 0..self.config.max_steps {
            let state = self.observe(position, t, &mut rng);
            let action = actor.act(&state, &mut rng)?;
            if action >= self.config.action_count {
                return Err(Error::InvalidArgument(format!(
                    "actor chose action {action} of {}",
                    self.config.action_count
                )));
            }
            let stage = self.stage_of[position];
            let executed = if rng.gen::<f64>() < self.config.slip {
                rng.gen_range(0..self.config.action_count)
            } else {
                action
            };
            if executed == self.correct[stage] {
                position += 1;
            }
            success = position == self.chain_length();
            let reward = if success { 1.0 } else { 0.0 };
            actor.observe_reward(reward);
            transitions.push(Transition {
                state,
                action: vec![action as f64],
                reward,
                stage_label: Some(stage as u32),
                done: success || t + 1 == self.config.max_steps,
            });
            if success {
                break;
            }
        }
        Ok((Episode::new(episode_id, transitions)?, success))
    }
}

/// Fraction of `episodes` rollouts that reach the end of the chain.
pub fn evaluate_policy<A: Actor + ?Sized>(
    actor: &mut A,
    env: &StageChainEnv,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut wins = 0;
    for e in 0..episodes {
        let (_, success) = env.rollout(actor, e as u64, rng::derive(seed, e as u64))?;
        wins += usize::from(success);
    }
    Ok(wins as f64 / episodes as f64)
}

/// Uniformly random actions.
pub struct UniformActor {
    pub action_count: usize,
}

impl Actor for UniformActor {
    fn act(&mut self, _state: &[f64], rng: &mut Rng) -> Result<usize> {
        Ok(rng.gen_range(0..self.action_count))
    }
}

/// Scripted behaviour policy: the correct action with probability
/// `competence`, otherwise uniform. Reads the stage from the one-hot block.
pub struct NoisyExpert<'a> {
    pub env: &'a StageChainEnv,
    pub competence: f64,
}

impl Actor for NoisyExpert<'_> {
    fn act(&mut self, state: &[f64], rng: &mut Rng) -> Result<usize> {
        let stage = state[..self.env.num_stages()]
            .iter()
            .position(|v| *v == 1.0)
            .unwrap_or(0);
        if rng.gen::<f64>() < self.competence {
            Ok(self.env.correct_action(stage))
        } else {
            Ok(rng.gen_range(0..self.env.action_count()))
        }
    }
}

/// Runs a policy conditioned on a target return, decremented by rewards
/// received so far.
pub struct PolicyActor<'a> {
    pub policy: &'a LinearSoftmaxPolicy,
    pub target_return: f64,
    /// `None` acts greedily; `Some(ε)` samples from the policy and takes a
    /// uniform action with probability ε.
    pub exploration: Option<f64>,
    received: f64,
}

impl<'a> PolicyActor<'a> {
    pub fn greedy(policy: &'a LinearSoftmaxPolicy, target_return: f64) -> Self {
        PolicyActor {
            policy,
            target_return,
            exploration: None,
            received: 0.0,
        }
    }

    pub fn sampling(policy: &'a LinearSoftmaxPolicy, target_return: f64, epsilon: f64) -> Self {
        PolicyActor {
            policy,
            target_return,
            exploration: Some(epsilon),
            received: 0.0,
        }
    }
}

impl Actor for PolicyActor<'_> {
    fn reset(&mut self) {
        self.received = 0.0;
    }

    fn act(&mut self, state: &[f64], rng: &mut Rng) -> Result<usize> {
        let rtg = self.target_return - self.received;
        match self.exploration {
            None => self.policy.greedy_action(state, rtg),
            Some(eps) => {
                let a = self.policy.action_count();
                if rng.gen::<f64>() < eps {
                    return Ok(rng.gen_range(0..a));
                }
                let probs = self.policy.action_probabilities(state, rtg)?;
                let mut u = rng.gen::<f64>();
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        return Ok(i);
                    }
                    u -= p;
                }
                Ok(a - 1)
            }
        }
    }

    fn observe_reward(&mut self, reward: f64) {
        self.received += reward;
    }
}
