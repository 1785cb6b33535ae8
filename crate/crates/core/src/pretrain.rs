//! Pretraining from reward-free demonstrations.
//!
//! The performance-difference identity
//! `eta(pi*) - eta(pi) = E_{pi*}[sum_t gamma^t A^pi(s_t, a_t)]` lets expert
//! `(s, a)` pairs speak about the learner's return. Replacing `A^pi` with the
//! estimator `A(s, a) = Q_w(s, a) - E_{a'~pi_theta} Q_w(s, a')` gives the
//! demonstration objective `J(w, theta)`, whose gradients drive:
//!
//! * the critic, through a hinge on `J` (the expert is assumed to do at least
//!   as well as the learner, so `J >= 0` should hold), and
//! * the actor, through `-grad_theta J`, an ascent direction on `eta(pi_theta)`.
//!
//! Both are added to the baseline algorithm's own gradients for a limited
//! number of training steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demo::Demonstration;
use crate::error::{check_len, Error, Result};
use crate::mdp::Action;
use crate::nn::{axpy, clip_norm};
use crate::value::{
    ContinuousActorCritic, DiscreteHeads, DiscreteModel, SharedActorCritic, SplitActorCritic,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HingeMode {
    /// Critic gradient active only while `J < 0`: pushes a violated constraint back to feasibility.
    Penalty,
    /// `grad_w [J]_+` taken literally: active only while `J > 0`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lambda_q: f64,
    pub lambda_pi: f64,
    /// Global L2 clip applied to the critic pretraining gradient.
    pub clip_norm: f64,
    /// Number of training updates (1-based) during which the demonstration gradients are added.
    pub pretrain_steps: u64,
    pub gamma: f64,
    pub hinge_mode: HingeMode,
    /// Demonstration pairs sampled per update; 0 uses every pair.
    pub demo_batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lambda_q: 1.0,
            lambda_pi: 1.0,
            clip_norm: 10.0,
            pretrain_steps: 2000,
            gamma: 0.99,
            hinge_mode: HingeMode::Penalty,
            demo_batch: 256,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_q >= 0.0 && self.lambda_pi >= 0.0) {
            return Err(Error::config("lambda_q and lambda_pi must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("pretraining gamma must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Whether update number `step` (1-based) still receives demonstration gradients.
    pub fn is_active(&self, step: u64) -> bool {
        step <= self.pretrain_steps
    }
}

/// Empirical demonstration objective and its exact gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageObjective {
    pub value: f64,
    pub grad_w: Vec<f64>,
    pub grad_theta: Vec<f64>,
}

/// One `(s, a)` pair with its weight in the objective.
#[derive(Debug, Clone, Copy)]
pub struct WeightedPair<'a> {
    pub obs: &'a [f64],
    pub action: &'a Action,
    pub weight: f64,
}

/// An actor-critic that can report `A(s, a)` with its gradients.
pub trait AdvantageModel {
    /// Length of the critic gradient vector.
    fn critic_len(&self) -> usize;
    /// Length of the actor gradient vector.
    fn actor_len(&self) -> usize;
    /// Returns `A(s, a)` and adds `weight * grad_w A`, `weight * grad_theta A`.
    fn advantage_grads(
        &self,
        obs: &[f64],
        action: &Action,
        weight: f64,
        grad_w: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<f64>;
}

impl AdvantageModel for ContinuousActorCritic {
    fn critic_len(&self) -> usize {
        self.critic.net.num_params()
    }

    fn actor_len(&self) -> usize {
        self.actor.net.num_params()
    }

    fn advantage_grads(
        &self,
        obs: &[f64],
        action: &Action,
        weight: f64,
        grad_w: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<f64> {
        let expert = match action {
            Action::Continuous(a) => a,
            Action::Discrete(_) => return Err(Error::usage("discrete action given to a continuous actor-critic")),
        };
        let (q_expert, tape_e) = self.critic.value_with_tape(obs, expert)?;
        let (own, actor_tape) = self.actor.act_with_tape(obs)?;
        let (q_own, tape_o) = self.critic.value_with_tape(obs, &own)?;
        self.critic.backward(&tape_e, weight, grad_w)?;
        // V = Q(s, pi(s)): its w-gradient enters with a minus sign, and the
        // theta path runs through grad_a Q at the policy's own action.
        let d_action = self.critic.backward(&tape_o, -weight, grad_w)?;
        self.actor.backward(&actor_tape, &d_action, grad_theta)?;
        Ok(q_expert - q_own)
    }
}

/// `A = q[a] - sum_i p_i q_i` with `dA/dq = e_a - p` and `dA/dlogits = -p (q - V)`.
fn discrete_advantage_cotangents(heads: &DiscreteHeads, action: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = heads.q.len();
    if action >= n {
        return Err(Error::usage(format!("action {action} out of range for {n} actions")));
    }
    let v = heads.value();
    let mut d_q: Vec<f64> = heads.probs.iter().map(|p| -p).collect();
    d_q[action] += 1.0;
    let d_logits = heads.probs.iter().zip(&heads.q).map(|(p, q)| -p * (q - v)).collect();
    Ok((heads.q[action] - v, d_q, d_logits))
}

fn discrete_advantage_grads<M: DiscreteModel>(
    model: &M,
    obs: &[f64],
    action: &Action,
    weight: f64,
    grad_w: &mut [f64],
    grad_theta: &mut [f64],
) -> Result<f64> {
    let a = match action {
        Action::Discrete(a) => *a,
        Action::Continuous(_) => return Err(Error::usage("continuous action given to a discrete actor-critic")),
    };
    let heads = model.heads(obs)?;
    let (adv, mut d_q, mut d_logits) = discrete_advantage_cotangents(&heads, a)?;
    d_q.iter_mut().for_each(|x| *x *= weight);
    d_logits.iter_mut().for_each(|x| *x *= weight);
    model.backward_heads(&heads, None, Some(&d_q), grad_w)?;
    model.backward_heads(&heads, Some(&d_logits), None, grad_theta)?;
    Ok(adv)
}

macro_rules! discrete_advantage_model {
    ($t:ty) => {
        impl AdvantageModel for $t {
            fn critic_len(&self) -> usize {
                self.num_params()
            }

            fn actor_len(&self) -> usize {
                self.num_params()
            }

            fn advantage_grads(
                &self,
                obs: &[f64],
                action: &Action,
                weight: f64,
                grad_w: &mut [f64],
                grad_theta: &mut [f64],
            ) -> Result<f64> {
                discrete_advantage_grads(self, obs, action, weight, grad_w, grad_theta)
            }
        }
    };
}

discrete_advantage_model!(SharedActorCritic);
discrete_advantage_model!(SplitActorCritic);

/// `J = sum_i weight_i * A(s_i, a_i)` with exact gradients.
pub fn weighted_advantage_objective<M: AdvantageModel + ?Sized>(
    pairs: &[WeightedPair<'_>],
    model: &M,
) -> Result<AdvantageObjective> {
    let mut grad_w = vec![0.0; model.critic_len()];
    let mut grad_theta = vec![0.0; model.actor_len()];
    let mut value = 0.0;
    for pair in pairs {
        let adv = model.advantage_grads(pair.obs, pair.action, pair.weight, &mut grad_w, &mut grad_theta)?;
        value += pair.weight * adv;
    }
    if !value.is_finite() {
        return Err(Error::numeric("demonstration objective is not finite"));
    }
    Ok(AdvantageObjective { value, grad_w, grad_theta })
}

/// Every demonstration pair, weighted `gamma^t / N` for `N` trajectories.
pub fn demo_pairs(demo: &Demonstration, gamma: f64) -> Vec<WeightedPair<'_>> {
    let n = demo.trajectories.len() as f64;
    demo.trajectories
        .iter()
        .flat_map(|traj| {
            traj.iter().scan(1.0 / n, move |w, step| {
                let pair = WeightedPair { obs: &step.obs, action: &step.action, weight: *w };
                *w *= gamma;
                Some(pair)
            })
        })
        .collect()
}

/// `(1/N) sum_trajectories sum_t gamma^t A(s*_t, a*_t)`, truncated at each
/// trajectory's recorded length.
pub fn advantage_objective<M: AdvantageModel + ?Sized>(
    demo: &Demonstration,
    model: &M,
    gamma: f64,
) -> Result<AdvantageObjective> {
    if demo.is_empty() {
        return Err(Error::usage("advantage objective needs at least one demonstration trajectory"));
    }
    weighted_advantage_objective(&demo_pairs(demo, gamma), model)
}

/// Unbiased minibatch version of [`advantage_objective`]: `batch` pairs drawn
/// uniformly with replacement, each reweighted so the expectation matches the
/// full objective.
pub fn sampled_advantage_objective<M: AdvantageModel + ?Sized, R: Rng + ?Sized>(
    demo: &Demonstration,
    model: &M,
    gamma: f64,
    batch: usize,
    rng: &mut R,
) -> Result<AdvantageObjective> {
    let all = demo_pairs(demo, gamma);
    if all.is_empty() {
        return Err(Error::usage("advantage objective needs at least one demonstration trajectory"));
    }
    if batch == 0 || batch >= all.len() {
        return weighted_advantage_objective(&all, model);
    }
    let scale = all.len() as f64 / batch as f64;
    let picked: Vec<WeightedPair<'_>> = (0..batch)
        .map(|_| {
            let p = all[rng.random_range(0..all.len())];
            WeightedPair { weight: p.weight * scale, ..p }
        })
        .collect();
    weighted_advantage_objective(&picked, model)
}

/// The critic pretraining gradient: a hinge on `J`, then an L2 clip.
pub fn g_q_star(objective: &AdvantageObjective, config: &PretrainConfig) -> Vec<f64> {
    let active = match config.hinge_mode {
        HingeMode::Penalty => objective.value < 0.0,
        HingeMode::Literal => objective.value > 0.0,
    };
    if !active {
        return vec![0.0; objective.grad_w.len()];
    }
    let mut g = objective.grad_w.clone();
    clip_norm(&mut g, config.clip_norm);
    g
}

/// The actor pretraining gradient `-grad_theta J`.
pub fn g_pi_star(objective: &AdvantageObjective) -> Vec<f64> {
    objective.grad_theta.iter().map(|g| -g).collect()
}

/// `g_q + lambda_q g_q*` and `g_pi + lambda_pi g_pi*` while update `step` is
/// within the budget; the baseline gradients unchanged afterwards.
pub fn combined_gradients(
    g_q: &[f64],
    g_pi: &[f64],
    g_q_star: &[f64],
    g_pi_star: &[f64],
    config: &PretrainConfig,
    step: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("critic pretraining gradient", g_q_star.len(), g_q.len())?;
    check_len("actor pretraining gradient", g_pi_star.len(), g_pi.len())?;
    let mut q = g_q.to_vec();
    let mut pi = g_pi.to_vec();
    if config.is_active(step) {
        axpy(&mut q, config.lambda_q, g_q_star);
        axpy(&mut pi, config.lambda_pi, g_pi_star);
    }
    Ok((q, pi))
}

/// `J >= 0`, the demonstration form of "the expert performs at least as well".
pub fn constraint_satisfied(objective: &AdvantageObjective) -> bool {
    objective.value >= 0.0
}

/// Upper bound on what truncating `sum_t gamma^t A_t` after `horizon` steps
/// can neglect when `|A| <= max_abs_advantage`.
pub fn truncation_tail_bound(gamma: f64, horizon: usize, max_abs_advantage: f64) -> f64 {
    gamma.powi(horizon as i32) * max_abs_advantage / (1.0 - gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(value: f64, grad_w: Vec<f64>) -> AdvantageObjective {
        AdvantageObjective { value, grad_theta: vec![0.5; grad_w.len()], grad_w }
    }

    #[test]
    fn penalty_hinge_inactive_when_satisfied() {
        let cfg = PretrainConfig::default();
        assert_eq!(g_q_star(&objective(0.0, vec![3.0, 4.0]), &cfg), vec![0.0, 0.0]);
        assert_eq!(g_q_star(&objective(2.5, vec![3.0, 4.0]), &cfg), vec![0.0, 0.0]);
    }

    #[test]
    fn penalty_hinge_clips_when_violated() {
        let cfg = PretrainConfig { clip_norm: 1.0, ..Default::default() };
        let g = g_q_star(&objective(-0.1, vec![30.0, 40.0]), &cfg);
        assert!((crate::nn::l2_norm(&g) - 1.0).abs() < 1e-12);
        assert!((g[0] - 0.6).abs() < 1e-12);
        let small = g_q_star(&objective(-0.1, vec![0.3, 0.4]), &cfg);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn literal_hinge_mirrors_penalty() {
        let literal = PretrainConfig { hinge_mode: HingeMode::Literal, ..Default::default() };
        assert_eq!(g_q_star(&objective(0.2, vec![1.0]), &literal), vec![1.0]);
        assert_eq!(g_q_star(&objective(-0.2, vec![1.0]), &literal), vec![0.0]);
        assert_eq!(g_q_star(&objective(0.0, vec![1.0]), &literal), vec![0.0]);
    }

    #[test]
    fn g_pi_star_negates() {
        let obj = AdvantageObjective { value: 0.0, grad_w: vec![], grad_theta: vec![1.0, -2.0] };
        assert_eq!(g_pi_star(&obj), vec![-1.0, 2.0]);
    }

    #[test]
    fn combined_gradient_cases() {
        let (gq, gp) = (vec![1.0, 2.0], vec![-1.0]);
        let zero_w = PretrainConfig { lambda_q: 0.0, lambda_pi: 0.0, ..Default::default() };
        assert_eq!(combined_gradients(&gq, &gp, &[5.0, 5.0], &[5.0], &zero_w, 1).unwrap(), (gq.clone(), gp.clone()));

        let ones = PretrainConfig::default();
        assert_eq!(combined_gradients(&gq, &gp, &[0.0, 0.0], &[0.0], &ones, 1).unwrap(), (gq.clone(), gp.clone()));
        assert_eq!(
            combined_gradients(&gq, &gp, &[0.5, -3.0], &[4.0], &ones, 1).unwrap(),
            (vec![1.5, -1.0], vec![3.0])
        );

        let budget = PretrainConfig { pretrain_steps: 10, ..Default::default() };
        let (q, p) = combined_gradients(&gq, &gp, &[0.5, -3.0], &[4.0], &budget, 11).unwrap();
        assert_eq!((q, p), (gq.clone(), gp.clone()));
        assert!(matches!(combined_gradients(&gq, &gp, &[0.5], &[4.0], &budget, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn constraint_boundaries() {
        assert!(constraint_satisfied(&objective(0.0, vec![])));
        assert!(!constraint_satisfied(&objective(-0.5, vec![])));
    }

    #[test]
    fn tail_bound_shrinks_with_horizon() {
        let b200 = truncation_tail_bound(0.99, 200, 1.0);
        assert!((b200 - 0.99f64.powi(200) * 100.0).abs() < 1e-12);
        assert!(truncation_tail_bound(0.99, 400, 1.0) < b200);
    }
}
