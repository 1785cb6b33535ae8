//! State-action value networks, the policy-induced estimators
//! `V(s) = E_{a~pi} Q(s, a)` and `A(s, a) = Q(s, a) - V(s)`, target networks,
//! and Retrace targets.

use rand::RngCore;

use crate::error::{check_len, Error, Result};
use crate::mdp::{sample_categorical, Action};
use crate::nn::{Mlp, Tape};
use crate::policy::{softmax, Actor, DeterministicPolicy, SoftmaxPolicy};

/// `Q(concat(obs, action)) -> scalar`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetContinuous {
    pub net: Mlp,
    pub obs_dim: usize,
}

impl QNetContinuous {
    pub fn new(net: Mlp, obs_dim: usize) -> Result<Self> {
        check_len("critic output", net.output_dim(), 1)?;
        if net.input_dim() <= obs_dim {
            return Err(Error::usage("critic input must hold the observation and the action"));
        }
        Ok(Self { net, obs_dim })
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - self.obs_dim
    }

    fn input(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("critic observation", obs.len(), self.obs_dim)?;
        check_len("critic action", action.len(), self.action_dim())?;
        let mut x = Vec::with_capacity(obs.len() + action.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        Ok(x)
    }

    pub fn value(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.input(obs, action)?)?[0])
    }

    pub fn value_with_tape(&self, obs: &[f64], action: &[f64]) -> Result<(f64, Tape)> {
        let tape = self.net.forward_tape(&self.input(obs, action)?)?;
        Ok((tape.output()[0], tape))
    }

    /// Adds `scale * grad_w Q` into `grad` and returns `scale * grad_a Q`.
    pub fn backward(&self, tape: &Tape, scale: f64, grad: &mut [f64]) -> Result<Vec<f64>> {
        let dx = self.net.backward_tape(tape, &[scale], grad)?;
        Ok(dx[self.obs_dim..].to_vec())
    }
}

/// `Q(obs) -> one value per action`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetDiscrete {
    pub net: Mlp,
}

impl QNetDiscrete {
    pub fn new(net: Mlp) -> Self {
        Self { net }
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }
}

/// A critic borrowed for the kind-checked estimators below.
#[derive(Debug, Clone, Copy)]
pub enum CriticRef<'a> {
    Continuous(&'a QNetContinuous),
    Discrete(&'a QNetDiscrete),
}

#[derive(Debug, Clone, Copy)]
pub enum PolicyRef<'a> {
    Deterministic(&'a DeterministicPolicy),
    Softmax(&'a SoftmaxPolicy),
}

/// `E_{a~pi(s)} Q(s, a)`: `Q(s, pi(s))` for deterministic policies, the exact
/// finite sum for softmax policies.
pub fn v_of_state(q: CriticRef<'_>, policy: PolicyRef<'_>, obs: &[f64]) -> Result<f64> {
    match (q, policy) {
        (CriticRef::Continuous(q), PolicyRef::Deterministic(pi)) => q.value(obs, &pi.act_deterministic(obs)?),
        (CriticRef::Discrete(q), PolicyRef::Softmax(pi)) => {
            let qs = q.q_values(obs)?;
            let probs = pi.action_probs(obs)?;
            check_len("policy/critic action count", probs.len(), qs.len())?;
            Ok(expected_value(&probs, &qs))
        }
        _ => Err(Error::usage("policy kind does not match critic kind")),
    }
}

/// `Q(s, a) - V(s)`.
pub fn advantage(q: CriticRef<'_>, policy: PolicyRef<'_>, obs: &[f64], action: &Action) -> Result<f64> {
    let v = v_of_state(q, policy, obs)?;
    let qa = match (q, action) {
        (CriticRef::Continuous(q), Action::Continuous(a)) => q.value(obs, a)?,
        (CriticRef::Discrete(q), Action::Discrete(a)) => *q
            .q_values(obs)?
            .get(*a)
            .ok_or_else(|| Error::usage(format!("action {a} out of range")))?,
        _ => return Err(Error::usage("action kind does not match critic kind")),
    };
    Ok(qa - v)
}

pub fn expected_value(probs: &[f64], q: &[f64]) -> f64 {
    probs.iter().zip(q).map(|(p, q)| p * q).sum()
}

/// Policy logits and Q-values for one observation, with what is needed to
/// backpropagate through them.
#[derive(Debug, Clone)]
pub struct DiscreteHeads {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub q: Vec<f64>,
    tapes: Vec<Tape>,
}

impl DiscreteHeads {
    /// Heads given directly as numbers, with nothing to backpropagate into.
    pub fn detached(logits: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        check_len("q head", q.len(), logits.len())?;
        Ok(Self { probs: softmax(&logits), logits, q, tapes: Vec::new() })
    }

    fn tape(&self, i: usize) -> Result<&Tape> {
        self.tapes.get(i).ok_or_else(|| Error::usage("heads carry no tape to backpropagate through"))
    }

    pub fn value(&self) -> f64 {
        expected_value(&self.probs, &self.q)
    }
}

/// A discrete actor-critic over one flat parameter vector. The policy
/// parameters theta and critic parameters w may overlap (shared trunk).
pub trait DiscreteModel {
    fn n_actions(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn heads(&self, obs: &[f64]) -> Result<DiscreteHeads>;
    /// Adds `d_logits . d(logits)/d(params) + d_q . d(q)/d(params)` into `grad`.
    fn backward_heads(
        &self,
        heads: &DiscreteHeads,
        d_logits: Option<&[f64]>,
        d_q: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Result<()>;
}

/// One network whose hidden layers feed both a logits head and a Q head:
/// output `[logits_0..n, q_0..n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedActorCritic {
    pub net: Mlp,
}

impl SharedActorCritic {
    pub fn new(net: Mlp) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::usage("shared actor-critic output must be [logits, q] of equal length"));
        }
        Ok(Self { net })
    }

    pub fn policy_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(obs)?;
        Ok(softmax(&out[..self.n_actions()]))
    }
}

impl DiscreteModel for SharedActorCritic {
    fn n_actions(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn heads(&self, obs: &[f64]) -> Result<DiscreteHeads> {
        let tape = self.net.forward_tape(obs)?;
        let n = self.n_actions();
        let out = tape.output();
        let logits = out[..n].to_vec();
        let q = out[n..].to_vec();
        Ok(DiscreteHeads { probs: softmax(&logits), logits, q, tapes: vec![tape] })
    }

    fn backward_heads(
        &self,
        heads: &DiscreteHeads,
        d_logits: Option<&[f64]>,
        d_q: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Result<()> {
        let n = self.n_actions();
        let mut cot = vec![0.0; 2 * n];
        if let Some(d) = d_logits {
            check_len("logit cotangent", d.len(), n)?;
            cot[..n].copy_from_slice(d);
        }
        if let Some(d) = d_q {
            check_len("q cotangent", d.len(), n)?;
            cot[n..].copy_from_slice(d);
        }
        self.net.backward_tape(heads.tape(0)?, &cot, grad)?;
        Ok(())
    }
}

impl Actor for SharedActorCritic {
    fn act(&self, obs: &[f64], rng: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::Discrete(sample_categorical(&self.policy_probs(obs)?, rng)))
    }

    fn tag(&self) -> String {
        format!("shared-actor-critic({} params)", self.net.num_params())
    }
}

/// Separate policy and critic networks, parameters laid out `[theta, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitActorCritic {
    pub policy: SoftmaxPolicy,
    pub q: QNetDiscrete,
}

impl SplitActorCritic {
    pub fn new(policy: SoftmaxPolicy, q: QNetDiscrete) -> Result<Self> {
        check_len("critic action count", q.n_actions(), policy.n_actions())?;
        Ok(Self { policy, q })
    }

    pub fn theta_len(&self) -> usize {
        self.policy.net.num_params()
    }
}

impl DiscreteModel for SplitActorCritic {
    fn n_actions(&self) -> usize {
        self.policy.n_actions()
    }

    fn num_params(&self) -> usize {
        self.policy.net.num_params() + self.q.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.policy.net.params().to_vec();
        p.extend_from_slice(self.q.net.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", params.len(), self.num_params())?;
        let (theta, w) = params.split_at(self.theta_len());
        self.policy.net.set_params(theta)?;
        self.q.net.set_params(w)
    }

    fn heads(&self, obs: &[f64]) -> Result<DiscreteHeads> {
        let pt = self.policy.net.forward_tape(obs)?;
        let qt = self.q.net.forward_tape(obs)?;
        let logits = pt.output().to_vec();
        let q = qt.output().to_vec();
        Ok(DiscreteHeads { probs: softmax(&logits), logits, q, tapes: vec![pt, qt] })
    }

    fn backward_heads(
        &self,
        heads: &DiscreteHeads,
        d_logits: Option<&[f64]>,
        d_q: Option<&[f64]>,
        grad: &mut [f64],
    ) -> Result<()> {
        check_len("gradient buffer", grad.len(), self.num_params())?;
        let (g_theta, g_w) = grad.split_at_mut(self.theta_len());
        if let Some(d) = d_logits {
            self.policy.net.backward_tape(heads.tape(0)?, d, g_theta)?;
        }
        if let Some(d) = d_q {
            self.q.net.backward_tape(heads.tape(1)?, d, g_w)?;
        }
        Ok(())
    }
}

/// Deterministic actor with its state-action critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousActorCritic {
    pub actor: DeterministicPolicy,
    pub critic: QNetContinuous,
}

/// One step of an off-policy trajectory as Retrace consumes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetraceStep {
    pub action: usize,
    pub reward: f64,
    /// `beta(a_t | s_t)` recorded at sampling time.
    pub behavior_prob: f64,
}

/// How a trajectory ends: bootstrap with `V(s_T)` after a cut, or zero at a true terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    Terminal,
    Bootstrap(f64),
}

/// `min(c, pi(a|s) / beta(a|s))`
pub fn truncated_ratio(pi_prob: f64, behavior_prob: f64, c: f64) -> Result<f64> {
    if !(behavior_prob > 0.0) {
        return Err(Error::numeric(format!("behavior probability {behavior_prob} must be positive")));
    }
    Ok((pi_prob / behavior_prob).min(c))
}

/// Retrace targets computed backward from the trajectory end:
/// `Q_ret(t) = r_t + gamma * (rho_bar(t+1) * (Q_ret(t+1) - Q(t+1)) + V(t+1))`.
pub fn retrace_from_heads(
    heads: &[DiscreteHeads],
    steps: &[RetraceStep],
    tail: Tail,
    c: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if steps.is_empty() {
        return Err(Error::usage("retrace needs a nonempty trajectory"));
    }
    check_len("retrace heads", heads.len(), steps.len())?;
    let mut targets = vec![0.0; steps.len()];
    let mut carry = match tail {
        Tail::Terminal => 0.0,
        Tail::Bootstrap(v) => v,
    };
    for t in (0..steps.len()).rev() {
        let step = &steps[t];
        let h = &heads[t];
        let ret = step.reward + gamma * carry;
        if !ret.is_finite() {
            return Err(Error::numeric(format!("non-finite Retrace target at step {t}")));
        }
        targets[t] = ret;
        let rho_bar = truncated_ratio(h.probs[step.action], step.behavior_prob, c)?;
        carry = rho_bar * (ret - h.q[step.action]) + h.value();
    }
    Ok(targets)
}

/// Retrace targets for a trajectory of observations. `final_obs` is the state
/// after the last step; it is bootstrapped unless `terminal`.
pub fn retrace_targets<M: DiscreteModel + ?Sized>(
    model: &M,
    observations: &[Vec<f64>],
    steps: &[RetraceStep],
    final_obs: &[f64],
    terminal: bool,
    c: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_len("trajectory observations", observations.len(), steps.len())?;
    let heads = observations.iter().map(|o| model.heads(o)).collect::<Result<Vec<_>>>()?;
    let tail = if terminal { Tail::Terminal } else { Tail::Bootstrap(model.heads(final_obs)?.value()) };
    retrace_from_heads(&heads, steps, tail, c, gamma)
}

/// Ascent direction for `-(target - Q(s, a))^2 / 2`, i.e. `(target - Q) grad_w Q`.
pub fn td_gradient_continuous(q: &QNetContinuous, obs: &[f64], action: &[f64], target: f64) -> Result<Vec<f64>> {
    check_target(target)?;
    let (value, tape) = q.value_with_tape(obs, action)?;
    let mut grad = vec![0.0; q.net.num_params()];
    q.backward(&tape, target - value, &mut grad)?;
    Ok(grad)
}

pub fn td_gradient_discrete(q: &QNetDiscrete, obs: &[f64], action: usize, target: f64) -> Result<Vec<f64>> {
    check_target(target)?;
    let tape = q.net.forward_tape(obs)?;
    if action >= q.n_actions() {
        return Err(Error::usage(format!("action {action} out of range")));
    }
    let mut cot = vec![0.0; q.n_actions()];
    cot[action] = target - tape.output()[action];
    let mut grad = vec![0.0; q.net.num_params()];
    q.net.backward_tape(&tape, &cot, &mut grad)?;
    Ok(grad)
}

fn check_target(target: f64) -> Result<()> {
    if target.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite TD target {target}")))
    }
}

/// Slowly tracking copy of a live network.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    pub net: Mlp,
    pub tau: f64,
}

impl TargetNetwork {
    pub fn new(live: &Mlp, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau <= 1.0) {
            return Err(Error::usage(format!("tau {tau} outside [0, 1]")));
        }
        Ok(Self { net: live.clone(), tau })
    }

    /// `target = tau * live + (1 - tau) * target`
    pub fn soft_update(&mut self, live: &Mlp) -> Result<()> {
        soft_update(&mut self.net, live, self.tau)
    }
}

/// `target = tau * live + (1 - tau) * target`, in place.
pub fn soft_update(target: &mut Mlp, live: &Mlp, tau: f64) -> Result<()> {
    if live.layers() != target.layers() {
        return Err(Error::usage("target and live networks differ in shape"));
    }
    for (t, l) in target.params_mut().iter_mut().zip(live.params()) {
        *t = tau * l + (1.0 - tau) * *t;
    }
    Ok(())
}
