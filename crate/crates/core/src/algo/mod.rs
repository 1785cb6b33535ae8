//! Baseline actor-critic training loops, each able to add the demonstration
//! gradients from [`crate::pretrain`].

pub mod acer;
pub mod ddpg;

use serde::Serialize;

use crate::error::Result;
use crate::mdp::{one_hot, Action, Environment, TabularMdp};
use crate::oracle::solve_policy;
use crate::policy::{argmax, DeterministicPolicy, TablePolicy};
use crate::value::DiscreteModel;

pub use acer::{acer_gradient, acer_surrogate, Acer, AcerConfig, AcerGradient};
pub use ddpg::{ddpg_actor_gradient, Ddpg, DdpgConfig};

/// What one training step reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    /// Gradient updates applied so far (1-based once training starts).
    pub step: u64,
    pub simulation_steps: u64,
    /// Undiscounted return of an episode that ended during this step.
    pub episode_return: Option<f64>,
    /// Demonstration objective, logged only while pretraining is active.
    pub j: Option<f64>,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub pretraining_active: bool,
}

/// The softmax policy of a discrete model on every state of a one-hot tabular MDP.
pub fn policy_table<M: DiscreteModel + ?Sized>(model: &M, n_states: usize) -> Result<TablePolicy> {
    let rows = (0..n_states)
        .map(|s| Ok(model.heads(&one_hot(s, n_states))?.probs))
        .collect::<Result<Vec<_>>>()?;
    TablePolicy::new(rows)
}

/// Exact discounted return of the model's policy.
pub fn exact_eta<M: DiscreteModel + ?Sized>(model: &M, mdp: &TabularMdp) -> Result<f64> {
    Ok(solve_policy(mdp, &policy_table(model, mdp.n_states())?)?.eta)
}

/// Greedy action of the learned Q head in every state (lowest index on ties).
pub fn greedy_q_actions<M: DiscreteModel + ?Sized>(model: &M, n_states: usize) -> Result<Vec<usize>> {
    (0..n_states)
        .map(|s| Ok(argmax(&model.heads(&one_hot(s, n_states))?.q)))
        .collect()
}

/// Mean undiscounted return of `act` over episodes started from `seeds`.
pub fn mean_return<F>(env: &mut dyn Environment, seeds: &[u64], mut act: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Action>,
{
    let mut total = 0.0;
    for &seed in seeds {
        total += crate::mdp::rollout(env, seed, &mut act)?.2;
    }
    Ok(total / seeds.len().max(1) as f64)
}

/// Mean return of a deterministic policy, acting without noise.
pub fn evaluate_deterministic(env: &mut dyn Environment, policy: &DeterministicPolicy, seeds: &[u64]) -> Result<f64> {
    mean_return(env, seeds, |obs| Ok(Action::Continuous(policy.act_deterministic(obs)?)))
}

/// Fixed evaluation seeds, disjoint from the training stream in practice.
pub fn eval_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| 0xE7A1_0000 + i).collect()
}
