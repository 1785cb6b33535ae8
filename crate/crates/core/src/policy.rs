//! Parameterized policies: deterministic continuous actors, categorical
//! softmax actors, exploration noise, and explicit probability tables.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mdp::{sample_categorical, Action};
use crate::nn::{Activation, Mlp, Tape};

/// Anything that can pick an action for recording or evaluation.
pub trait Actor {
    /// Acts as the policy itself would, without added exploration noise.
    /// Stochastic policies sample; deterministic ones ignore `rng`.
    fn act(&self, obs: &[f64], rng: &mut dyn rand::RngCore) -> Result<Action>;
    fn tag(&self) -> String;
}

/// `a = mid + half_range * tanh(net(s))`, so actions always lie within bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPolicy {
    pub net: Mlp,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl DeterministicPolicy {
    pub fn new(net: Mlp, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        check_len("action bounds", action_low.len(), net.output_dim())?;
        check_len("action bounds", action_high.len(), net.output_dim())?;
        if net.layers().last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(Error::usage("deterministic policy needs a tanh output layer"));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::usage("action_low must be below action_high"));
        }
        Ok(Self { net, action_low, action_high })
    }

    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    fn half_range(&self, i: usize) -> f64 {
        0.5 * (self.action_high[i] - self.action_low[i])
    }

    fn squash(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, y)| {
                let mid = 0.5 * (self.action_high[i] + self.action_low[i]);
                (mid + self.half_range(i) * y).clamp(self.action_low[i], self.action_high[i])
            })
            .collect()
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.squash(&self.net.forward(obs)?))
    }

    /// Forward pass keeping the tape for a later [`Self::backward`].
    pub fn act_with_tape(&self, obs: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let tape = self.net.forward_tape(obs)?;
        Ok((self.squash(tape.output()), tape))
    }

    /// Adds `d(cotangent . action)/d(theta)` to `grad`.
    pub fn backward(&self, tape: &Tape, action_cotangent: &[f64], grad: &mut [f64]) -> Result<()> {
        let scaled: Vec<f64> = action_cotangent
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.half_range(i))
            .collect();
        self.net.backward_tape(tape, &scaled, grad)?;
        Ok(())
    }

    pub fn clip(&self, action: &mut [f64]) {
        for (i, a) in action.iter_mut().enumerate() {
            *a = a.clamp(self.action_low[i], self.action_high[i]);
        }
    }

    /// Deterministic action plus exploration noise, clipped to bounds.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        noise: &mut ExplorationNoise,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut a = self.act_deterministic(obs)?;
        if noise.is_silent() {
            return Ok(a);
        }
        let n = noise.sample(rng);
        for (ai, ni) in a.iter_mut().zip(&n) {
            *ai += ni;
        }
        self.clip(&mut a);
        Ok(a)
    }
}

impl Actor for DeterministicPolicy {
    fn act(&self, obs: &[f64], _rng: &mut dyn rand::RngCore) -> Result<Action> {
        Ok(Action::Continuous(self.act_deterministic(obs)?))
    }

    fn tag(&self) -> String {
        "deterministic".into()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(logits)[a]`, computed from the logits directly.
pub fn log_softmax_at(logits: &[f64], a: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[a] - lse
}

/// Categorical policy over one logit per action.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub net: Mlp,
}

impl SoftmaxPolicy {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn action_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.forward(obs)?))
    }

    pub fn log_prob(&self, obs: &[f64], action: usize) -> Result<f64> {
        let logits = self.net.forward(obs)?;
        self.check_action(action)?;
        Ok(log_softmax_at(&logits, action))
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action < self.n_actions() {
            Ok(())
        } else {
            Err(Error::usage(format!("action {action} out of range for {} actions", self.n_actions())))
        }
    }

    /// Exact `grad_theta log pi(a|s)`.
    pub fn log_prob_grad(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check_action(action)?;
        let tape = self.net.forward_tape(obs)?;
        let cot = log_prob_logit_grad(tape.output(), action);
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward_tape(&tape, &cot, &mut grad)?;
        Ok(grad)
    }

    /// Draws `a ~ pi(.|s)` and returns it with the full probability vector it
    /// was drawn from (the behavior distribution to store).
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(usize, Vec<f64>)> {
        let probs = self.action_probs(obs)?;
        Ok((sample_categorical(&probs, rng), probs))
    }
}

impl Actor for SoftmaxPolicy {
    fn act(&self, obs: &[f64], rng: &mut dyn rand::RngCore) -> Result<Action> {
        Ok(Action::Discrete(self.sample_action(obs, rng)?.0))
    }

    fn tag(&self) -> String {
        "softmax".into()
    }
}

/// `d log softmax(logits)[a] / d logits = e_a - softmax(logits)`.
pub fn log_prob_logit_grad(logits: &[f64], action: usize) -> Vec<f64> {
    let mut g: Vec<f64> = softmax(logits).into_iter().map(|p| -p).collect();
    g[action] += 1.0;
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Ou,
}

/// Additive exploration noise for deterministic policies.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationNoise {
    pub kind: NoiseKind,
    pub scale: Vec<f64>,
    pub ou_theta: f64,
    state: Vec<f64>,
}

impl ExplorationNoise {
    pub fn gaussian(scale: Vec<f64>) -> Self {
        let state = vec![0.0; scale.len()];
        Self { kind: NoiseKind::Gaussian, scale, ou_theta: 0.15, state }
    }

    pub fn ou(scale: Vec<f64>, theta: f64) -> Self {
        let state = vec![0.0; scale.len()];
        Self { kind: NoiseKind::Ou, scale, ou_theta: theta, state }
    }

    pub fn is_silent(&self) -> bool {
        self.scale.iter().all(|&s| s == 0.0)
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            NoiseKind::Gaussian => self
                .scale
                .iter()
                .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            NoiseKind::Ou => {
                for (x, s) in self.state.iter_mut().zip(&self.scale) {
                    let z: f64 = rng.sample(StandardNormal);
                    *x += -self.ou_theta * *x + s * z;
                }
                self.state.clone()
            }
        }
    }
}

/// Explicit `pi(a|s)` table over a tabular MDP; observations are one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TablePolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-10 {
                return Err(Error::usage(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self { probs })
    }

    /// Deterministic table from one action per state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs.iter().map(|row| argmax(row)).collect()
    }
}

impl Actor for TablePolicy {
    fn act(&self, obs: &[f64], rng: &mut dyn rand::RngCore) -> Result<Action> {
        let s = state_of(obs)?;
        let row = self
            .probs
            .get(s)
            .ok_or_else(|| Error::usage(format!("state {s} not in policy table")))?;
        Ok(Action::Discrete(sample_categorical(row, rng)))
    }

    fn tag(&self) -> String {
        "table".into()
    }
}

/// Index of the hot entry of a one-hot observation.
pub fn state_of(obs: &[f64]) -> Result<usize> {
    obs.iter()
        .position(|&x| x == 1.0)
        .ok_or_else(|| Error::usage("observation is not one-hot"))
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
