//! Reward-free expert demonstrations and the replay memories used by the
//! baseline algorithms.
//!
//! Demonstration files are JSON lines: a header object, then one line per
//! trajectory holding an array of steps, each step `[obs..., action...]`.
//! There is no reward field anywhere in the format.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, Action, ActionSpace, Environment, Observation, SimRng};
use crate::policy::Actor;
use crate::value::RetraceStep;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoMeta {
    pub env: String,
    pub policy: String,
    pub seed: u64,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub obs: Observation,
    pub action: Action,
}

/// Expert `(s, a)` trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub meta: DemoMeta,
    pub trajectories: Vec<Vec<DemoStep>>,
}

impl Demonstration {
    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let action_dim = self.meta.action_space.flat_dim();
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.is_empty() {
                return Err(Error::config(format!("trajectory {i} is empty")));
            }
            for step in traj {
                if step.obs.len() != self.meta.obs_dim {
                    return Err(Error::config(format!(
                        "trajectory {i}: observation has {} features, expected {}",
                        step.obs.len(),
                        self.meta.obs_dim
                    )));
                }
                if step.action.to_floats().len() != action_dim {
                    return Err(Error::config(format!("trajectory {i}: action has wrong dimension")));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.meta)?;
        out.write_all(b"\n")?;
        for traj in &self.trajectories {
            let rows: Vec<Vec<f64>> = traj
                .iter()
                .map(|s| {
                    let mut row = s.obs.clone();
                    row.extend(s.action.to_floats());
                    row
                })
                .collect();
            serde_json::to_writer(&mut out, &rows)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::config("demonstration file is empty"))??;
        let meta: DemoMeta = serde_json::from_str(&header)
            .map_err(|e| Error::config(format!("bad demonstration header: {e}")))?;
        let row_len = meta.obs_dim + meta.action_space.flat_dim();
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rows: Vec<Vec<f64>> = serde_json::from_str(&line)
                .map_err(|e| Error::config(format!("trajectory {i}: {e}")))?;
            let steps = rows
                .into_iter()
                .map(|row| {
                    if row.len() != row_len {
                        return Err(Error::config(format!(
                            "trajectory {i}: step has {} values, expected {row_len} (observation and action only)",
                            row.len()
                        )));
                    }
                    let action = meta.action_space.decode(&row[meta.obs_dim..])?;
                    Ok(DemoStep { obs: row[..meta.obs_dim].to_vec(), action })
                })
                .collect::<Result<Vec<_>>>()?;
            trajectories.push(steps);
        }
        let demo = Self { meta, trajectories };
        demo.validate()?;
        Ok(demo)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::config(format!("cannot open demonstration file {}: {e}", path.display())))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

/// Rolls out `actor` without exploration noise and keeps only `(s, a)` pairs.
/// Episode `i` is reset with a seed drawn from a generator seeded by `seed`.
pub fn record_demonstrations(
    actor: &dyn Actor,
    env: &mut dyn Environment,
    n_trajectories: usize,
    seed: u64,
) -> Result<Demonstration> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for _ in 0..n_trajectories {
        let episode_seed = rng.next_u64();
        let (states, actions, _return) = rollout(env, episode_seed, |obs| actor.act(obs, &mut rng))?;
        trajectories.push(
            states
                .into_iter()
                .zip(actions)
                .map(|(obs, action)| DemoStep { obs, action })
                .collect(),
        );
    }
    Ok(Demonstration {
        meta: DemoMeta {
            env: env.name().to_owned(),
            policy: actor.tag(),
            seed,
            obs_dim: env.obs_dim(),
            action_space: env.action_space(),
        },
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Flat action encoding (`[index]` for discrete actions).
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub behavior_prob: f64,
}

/// FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Indices of a uniform without-replacement sample.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch_size || batch_size == 0 {
            return Err(Error::Underfull { have: self.items.len(), need: batch_size.max(1) });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch_size).into_vec())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch_size, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// A stored on-policy rollout segment, kept whole for Retrace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub steps: Vec<RetraceStep>,
    /// Full `beta(.|s_t)` at sampling time, needed for the bias-correction term.
    pub behavior_probs: Vec<Vec<f64>>,
    pub final_obs: Observation,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Trajectory replay bounded by total stored frames; oldest segments go first.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    capacity_frames: usize,
    frames: usize,
    items: VecDeque<Trajectory>,
}

impl TrajectoryBuffer {
    pub fn new(capacity_frames: usize) -> Self {
        Self { capacity_frames, frames: 0, items: VecDeque::new() }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Trajectory) {
        self.frames += t.len();
        self.items.push_back(t);
        while self.frames > self.capacity_frames && self.items.len() > 1 {
            let old = self.items.pop_front().unwrap();
            self.frames -= old.len();
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Trajectory> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.random_range(0..self.items.len())])
        }
    }
}
