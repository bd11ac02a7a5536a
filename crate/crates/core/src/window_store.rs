//! Episode storage and trajectory-window materialisation.
//!
//! The buffer holds whole episodes in arrival order and evicts the oldest
//! whole episode when the transition capacity is exceeded, so every window
//! that can be addressed is always backed by a complete episode. Windows
//! never cross episode boundaries.
//!
//! Windows are addressed two ways:
//! * by [`WindowRef`] `(episode_id, start)`, which is stable across appends
//!   and evictions, and
//! * by a dense index in `0..window_count(h)` enumerating episodes oldest
//!   first and starts ascending. The dense index is what replay uses as the
//!   buffer `D`; it shifts whenever the buffer changes.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Continuous action vector, or a single-element vector holding a
    /// discrete action index.
    pub action: Vec<f64>,
    pub reward: f64,
    pub stage_label: Option<u32>,
    pub done: bool,
}

impl Transition {
    /// The discrete action index, if the action is a single non-negative integer.
    pub fn discrete_action(&self) -> Option<usize> {
        match self.action.as_slice() {
            [a] if *a >= 0.0 && a.fract() == 0.0 => Some(*a as usize),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn new(id: u64, transitions: Vec<Transition>) -> Result<Self> {
        let episode = Episode { id, transitions };
        episode.validate()?;
        Ok(episode)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.transitions.first() else {
            return Err(Error::InvalidEpisode(format!("episode {} is empty", self.id)));
        };
        let dim = first.state.len();
        let last = self.transitions.len() - 1;
        for (t, tr) in self.transitions.iter().enumerate() {
            if tr.state.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: tr.state.len(),
                });
            }
            if !tr.reward.is_finite() {
                return Err(Error::InvalidEpisode(format!(
                    "episode {} step {t}: reward is not finite",
                    self.id
                )));
            }
            if tr.done && t != last {
                return Err(Error::InvalidEpisode(format!(
                    "episode {} step {t}: done before the final transition",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Return-to-go for every step, discounted by `gamma`, to episode end.
    pub fn return_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut rtg = vec![0.0; self.len()];
        let mut acc = 0.0;
        for (t, tr) in self.transitions.iter().enumerate().rev() {
            acc = tr.reward + gamma * acc;
            rtg[t] = acc;
        }
        rtg
    }
}

/// Stable address of a window within the buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowRef {
    pub episode_id: u64,
    pub start: usize,
}

/// A length-`horizon` contiguous slice of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    pub episode_id: u64,
    pub start: usize,
    pub horizon: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Return-to-go at each step, accumulated to the end of the episode.
    pub rtg: Vec<f64>,
    /// Stage of the last step in the window; missing labels read as 0.
    pub stage_label: u32,
    /// Per-step stage labels (missing read as 0).
    pub step_stages: Vec<u32>,
}

impl TrajectoryWindow {
    pub fn window_ref(&self) -> WindowRef {
        WindowRef {
            episode_id: self.episode_id,
            start: self.start,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Discounted return of the window itself: `Σ_k γ^k r_{t+k}`.
pub fn discounted_window_return(window: &TrajectoryWindow, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in &window.rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Clone, Debug)]
struct StoredEpisode {
    episode: Episode,
    rtg: Vec<f64>,
}

/// Append-only episode store with whole-episode FIFO eviction.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<StoredEpisode>,
    capacity: usize,
    gamma: f64,
    state_dim: Option<usize>,
    transitions: usize,
    last_id: Option<u64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, gamma: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(ReplayBuffer {
            episodes: VecDeque::new(),
            capacity,
            gamma,
            state_dim: None,
            transitions: 0,
            last_id: None,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.state_dim
    }

    pub fn len_transitions(&self) -> usize {
        self.transitions
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().map(|s| &s.episode)
    }

    /// Smallest id that `append_episode` will accept next.
    pub fn next_episode_id(&self) -> u64 {
        self.last_id.map_or(0, |id| id + 1)
    }

    /// Stores `episode`, evicting the oldest whole episodes if the capacity
    /// is exceeded.
    pub fn append_episode(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        let dim = episode.transitions[0].state.len();
        if let Some(expected) = self.state_dim {
            if dim != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: dim,
                });
            }
        }
        if let Some(last) = self.last_id {
            if episode.id <= last {
                return Err(Error::InvalidEpisode(format!(
                    "episode id {} is not greater than the last stored id {last}",
                    episode.id
                )));
            }
        }
        if episode.len() > self.capacity {
            return Err(Error::InvalidEpisode(format!(
                "episode {} has {} transitions, more than the buffer capacity {}",
                episode.id,
                episode.len(),
                self.capacity
            )));
        }

        self.state_dim = Some(dim);
        self.last_id = Some(episode.id);
        self.transitions += episode.len();
        let rtg = episode.return_to_go(self.gamma);
        self.episodes.push_back(StoredEpisode { episode, rtg });

        while self.transitions > self.capacity {
            let evicted = self.episodes.pop_front().expect("over capacity implies non-empty");
            self.transitions -= evicted.episode.len();
        }
        Ok(())
    }

    /// Number of valid `(episode, start)` pairs for windows of length `horizon`.
    pub fn window_count(&self, horizon: usize) -> usize {
        if horizon == 0 {
            return 0;
        }
        self.episodes
            .iter()
            .map(|s| (s.episode.len() + 1).saturating_sub(horizon))
            .sum()
    }

    /// Maps a dense window index to its stable reference.
    pub fn window_ref(&self, index: usize, horizon: usize) -> Option<WindowRef> {
        if horizon == 0 {
            return None;
        }
        let mut remaining = index;
        for s in &self.episodes {
            let starts = (s.episode.len() + 1).saturating_sub(horizon);
            if remaining < starts {
                return Some(WindowRef {
                    episode_id: s.episode.id,
                    start: remaining,
                });
            }
            remaining -= starts;
        }
        None
    }

    /// Maps a stable reference back to its current dense index, if the
    /// window is still stored.
    pub fn window_index(&self, window: &WindowRef, horizon: usize) -> Option<usize> {
        if horizon == 0 {
            return None;
        }
        let mut offset = 0;
        for s in &self.episodes {
            let starts = (s.episode.len() + 1).saturating_sub(horizon);
            if s.episode.id == window.episode_id {
                return (window.start < starts).then_some(offset + window.start);
            }
            offset += starts;
        }
        None
    }

    /// Dense indices for many references at once; references that are no
    /// longer stored are dropped.
    pub fn window_indices(&self, windows: &[WindowRef], horizon: usize) -> Vec<usize> {
        windows
            .iter()
            .filter_map(|w| self.window_index(w, horizon))
            .collect()
    }

    pub fn window(&self, window: &WindowRef, horizon: usize) -> Result<TrajectoryWindow> {
        let stored = self
            .episodes
            .iter()
            .find(|s| s.episode.id == window.episode_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("episode {} is not stored", window.episode_id))
            })?;
        if horizon == 0 || window.start + horizon > stored.episode.len() {
            return Err(Error::InvalidArgument(format!(
                "window start {} + horizon {horizon} exceeds episode {} length {}",
                window.start,
                window.episode_id,
                stored.episode.len()
            )));
        }
        Ok(materialize(stored, window.start, horizon))
    }

    pub fn window_at(&self, index: usize, horizon: usize) -> Result<TrajectoryWindow> {
        let r = self.window_ref(index, horizon).ok_or_else(|| {
            Error::InvalidArgument(format!("window index {index} out of range"))
        })?;
        self.window(&r, horizon)
    }

    /// Draws `min(n, #valid starts)` windows uniformly without replacement
    /// over all valid `(episode, start)` pairs. The returned pool is ordered
    /// by dense window index.
    pub fn sample_candidate_pool(
        &self,
        n: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Vec<TrajectoryWindow>> {
        let total = self.window_count(horizon);
        if total == 0 {
            return Err(Error::NoValidWindows { horizon });
        }
        let amount = n.min(total);
        let mut rng = rng::seeded(seed);
        let mut picks = index::sample(&mut rng, total, amount).into_vec();
        picks.sort_unstable();
        picks
            .into_iter()
            .map(|i| self.window_at(i, horizon))
            .collect()
    }

    /// Writes one JSON object per transition, oldest episode first.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.episodes {
            for (t, tr) in s.episode.transitions.iter().enumerate() {
                let record = TransitionRecord {
                    episode: s.episode.id,
                    t,
                    state: tr.state.clone(),
                    action: tr.action.clone(),
                    reward: tr.reward,
                    stage: tr.stage_label,
                    done: tr.done,
                };
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")
                    .map_err(|e| Error::io("<buffer export>", e))?;
            }
        }
        Ok(())
    }

    /// Reads a JSON-lines buffer dump. Consecutive lines with the same
    /// `episode` form one episode and `t` must count up from 0.
    pub fn read_jsonl<R: BufRead>(input: R, capacity: usize, gamma: f64) -> Result<Self> {
        let mut buffer = ReplayBuffer::new(capacity, gamma)?;
        let mut current: Option<(u64, usize, Vec<Transition>)> = None;
        let mut dim: Option<usize> = None;

        let flush = |buffer: &mut ReplayBuffer,
                         pending: Option<(u64, usize, Vec<Transition>)>|
         -> Result<()> {
            if let Some((id, line, transitions)) = pending {
                buffer
                    .append_episode(Episode { id, transitions })
                    .map_err(|e| Error::Parse {
                        line,
                        message: e.to_string(),
                    })?;
            }
            Ok(())
        };

        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TransitionRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            match dim {
                Some(d) if d != rec.state.len() => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!(
                            "state dimension {} differs from {d}",
                            rec.state.len()
                        ),
                    })
                }
                None => dim = Some(rec.state.len()),
                _ => {}
            }
            let same_episode = matches!(&current, Some((id, _, _)) if *id == rec.episode);
            if !same_episode {
                flush(&mut buffer, current.take())?;
                current = Some((rec.episode, lineno, Vec::new()));
            }
            let (_, _, transitions) = current.as_mut().expect("set above");
            if rec.t != transitions.len() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!(
                        "episode {} expected t = {}, found {}",
                        rec.episode,
                        transitions.len(),
                        rec.t
                    ),
                });
            }
            transitions.push(Transition {
                state: rec.state,
                action: rec.action,
                reward: rec.reward,
                stage_label: rec.stage,
                done: rec.done,
            });
        }
        flush(&mut buffer, current)?;
        Ok(buffer)
    }
}

fn materialize(stored: &StoredEpisode, start: usize, horizon: usize) -> TrajectoryWindow {
    let slice = &stored.episode.transitions[start..start + horizon];
    let step_stages: Vec<u32> = slice.iter().map(|t| t.stage_label.unwrap_or(0)).collect();
    TrajectoryWindow {
        episode_id: stored.episode.id,
        start,
        horizon,
        states: slice.iter().map(|t| t.state.clone()).collect(),
        actions: slice.iter().map(|t| t.action.clone()).collect(),
        rewards: slice.iter().map(|t| t.reward).collect(),
        rtg: stored.rtg[start..start + horizon].to_vec(),
        stage_label: *step_stages.last().expect("horizon >= 1"),
        step_stages,
    }
}

/// On-disk transition record. Field order here is the export order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    episode: u64,
    t: usize,
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    #[serde(default)]
    stage: Option<u32>,
    #[serde(default)]
    done: bool,
}
