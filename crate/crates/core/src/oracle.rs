//! Exact dynamic-programming ground truth on tabular MDPs.
//!
//! Everything here is computed by direct linear solves, never by sampling,
//! and serves as the reference the learning code is checked against.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, TabularMdp};
use crate::policy::TablePolicy;

/// `V`, `Q`, `A`, `eta` and the normalized discounted state occupancy of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
    pub eta: f64,
    /// `(1 - gamma) sum_t gamma^t Pr(s_t = s)`; sums to one.
    pub occupancy: Vec<f64>,
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::numeric("singular linear system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("linear solve produced non-finite values"));
    }
    Ok(x)
}

fn check_policy(mdp: &TabularMdp, policy: &TablePolicy) -> Result<()> {
    if policy.probs.len() != mdp.n_states() || policy.probs.iter().any(|r| r.len() != mdp.n_actions()) {
        return Err(Error::usage("policy table shape does not match the MDP"));
    }
    Ok(())
}

/// `P_pi[s][s'] = sum_a pi(a|s) P[s][a][s']`
pub fn policy_transition(mdp: &TabularMdp, policy: &TablePolicy) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            for (a, &p) in policy.probs[s].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (sp, &t) in mdp.next_state_probs(s, a).iter().enumerate() {
                    row[sp] += p * t;
                }
            }
            row
        })
        .collect()
}

pub fn solve_policy(mdp: &TabularMdp, policy: &TablePolicy) -> Result<ExactSolution> {
    check_policy(mdp, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let p_pi = policy_transition(mdp, policy);

    // (I - gamma P_pi) V = r
    let system: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..n).map(|sp| f64::from(u8::from(s == sp)) - gamma * p_pi[s][sp]).collect())
        .collect();
    let v = solve_linear(system.clone(), mdp.reward().to_vec())?;

    let q: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| {
                    let next: f64 = mdp.next_state_probs(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                    mdp.reward()[s] + gamma * next
                })
                .collect()
        })
        .collect();
    let advantage = q
        .iter()
        .zip(&v)
        .map(|(row, vs)| row.iter().map(|qa| qa - vs).collect())
        .collect();
    let eta = mdp.rho0().iter().zip(&v).map(|(p, v)| p * v).sum();

    // (I - gamma P_pi)^T d = (1 - gamma) rho0
    let transposed: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| system[j][i]).collect()).collect();
    let rhs: Vec<f64> = mdp.rho0().iter().map(|p| (1.0 - gamma) * p).collect();
    let occupancy = solve_linear(transposed, rhs)?;

    Ok(ExactSolution { v, q, advantage, eta, occupancy })
}

/// Iterates the policy Bellman operator `sweeps` times from zero.
pub fn iterate_policy_values(mdp: &TabularMdp, policy: &TablePolicy, sweeps: usize) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let p_pi = policy_transition(mdp, policy);
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..sweeps {
        v = (0..mdp.n_states())
            .map(|s| mdp.reward()[s] + mdp.gamma() * p_pi[s].iter().zip(&v).map(|(p, v)| p * v).sum::<f64>())
            .collect();
    }
    Ok(v)
}

/// `max_s |V - (r + gamma P_pi V)|`
pub fn bellman_residual(mdp: &TabularMdp, policy: &TablePolicy, v: &[f64]) -> f64 {
    let p_pi = policy_transition(mdp, policy);
    (0..mdp.n_states())
        .map(|s| {
            let backup = mdp.reward()[s] + mdp.gamma() * p_pi[s].iter().zip(v).map(|(p, v)| p * v).sum::<f64>();
            (v[s] - backup).abs()
        })
        .fold(0.0, f64::max)
}

/// Both sides of the performance-difference identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Check {
    /// `eta(pi_star) - eta(pi)`
    pub lhs: f64,
    /// `E_{pi_star}[sum_t gamma^t A^pi(s_t, a_t)]`, contracted exactly through the occupancy of `pi_star`.
    pub rhs: f64,
    pub gap: f64,
}

pub fn verify_theorem1(mdp: &TabularMdp, pi_star: &TablePolicy, pi: &TablePolicy) -> Result<Theorem1Check> {
    let star = solve_policy(mdp, pi_star)?;
    let base = solve_policy(mdp, pi)?;
    let lhs = star.eta - base.eta;
    let rhs = expected_discounted_advantage(mdp, &star.occupancy, pi_star, &base.advantage);
    Ok(Theorem1Check { lhs, rhs, gap: (lhs - rhs).abs() })
}

/// `sum_{s,a} d(s) pi(a|s) A(s,a) / (1 - gamma)`
pub fn expected_discounted_advantage(
    mdp: &TabularMdp,
    occupancy: &[f64],
    policy: &TablePolicy,
    advantage: &[Vec<f64>],
) -> f64 {
    let mut total = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            total += occupancy[s] * policy.probs[s][a] * advantage[s][a];
        }
    }
    total / (1.0 - mdp.gamma())
}

/// Exact discounted visitation weights `sum_t gamma^t Pr(s_t = s, a_t = a)` under `policy`.
pub fn discounted_pair_weights(mdp: &TabularMdp, policy: &TablePolicy) -> Result<Vec<Vec<f64>>> {
    let sol = solve_policy(mdp, policy)?;
    let scale = 1.0 / (1.0 - mdp.gamma());
    Ok((0..mdp.n_states())
        .map(|s| policy.probs[s].iter().map(|p| sol.occupancy[s] * p * scale).collect())
        .collect())
}

/// Monte-Carlo estimate of `E_{pi_star}[sum_{t<horizon} gamma^t A(s_t, a_t)]`
/// with its standard error, for cross-checking sampled pipelines.
pub fn sampled_discounted_advantage<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi_star: &TablePolicy,
    advantage: &[Vec<f64>],
    n_trajectories: usize,
    horizon: usize,
    rng: &mut R,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_trajectories {
        let mut s = sample_categorical(mdp.rho0(), rng);
        let mut discount = 1.0;
        let mut total = 0.0;
        for _ in 0..horizon {
            let a = sample_categorical(&pi_star.probs[s], rng);
            total += discount * advantage[s][a];
            discount *= mdp.gamma();
            s = sample_categorical(mdp.next_state_probs(s, a), rng);
        }
        sum += total;
        sum_sq += total * total;
    }
    let n = n_trajectories as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Optimal state values by value iteration until the sup-norm change is below `tol`.
pub fn optimal_values(mdp: &TabularMdp, tol: f64) -> Vec<f64> {
    let mut v = vec![0.0; mdp.n_states()];
    loop {
        let next: Vec<f64> = (0..mdp.n_states()).map(|s| q_row(mdp, &v, s).into_iter().fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < tol {
            return v;
        }
    }
}

fn q_row(mdp: &TabularMdp, v: &[f64], s: usize) -> Vec<f64> {
    (0..mdp.n_actions())
        .map(|a| {
            mdp.reward()[s]
                + mdp.gamma() * mdp.next_state_probs(s, a).iter().zip(v).map(|(p, v)| p * v).sum::<f64>()
        })
        .collect()
}

/// Greedy policy from value iteration (residual 1e-12). Ties, up to rounding,
/// go to the lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> TablePolicy {
    let v = optimal_values(mdp, 1e-12);
    let actions: Vec<usize> = (0..mdp.n_states())
        .map(|s| {
            let q = q_row(mdp, &v, s);
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tie = 1e-9 * (1.0 + best.abs());
            q.iter().position(|&x| x >= best - tie).unwrap()
        })
        .collect();
    TablePolicy::deterministic(&actions, mdp.n_actions())
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_difference<F>(mut objective: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = objective(&x)?;
        x[i] = orig - epsilon;
        let down = objective(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!("objective not finite around coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// `max_i |analytic_i - numeric_i| / (1 + |analytic_i|)`
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

/// Dirichlet(1) vector via normalized exponentials.
fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    let mut p: Vec<f64> = draws.into_iter().map(|x| x / total).collect();
    // Push the rounding residue into the largest entry so rows sum to one tightly.
    let residue = 1.0 - p.iter().sum::<f64>();
    let i = crate::policy::argmax(&p);
    p[i] += residue;
    p
}

/// Random MDP: Dirichlet(1) transition rows and initial distribution, uniform `[0, 1]` rewards.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<TabularMdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(flat_dirichlet(n_states, rng));
    }
    let reward = (0..n_states).map(|_| rng.random::<f64>()).collect();
    let rho0 = flat_dirichlet(n_states, rng);
    TabularMdp::new(n_states, n_actions, transition, reward, rho0, gamma)
}

/// Random stochastic policy with Dirichlet(1) rows.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> TablePolicy {
    TablePolicy { probs: (0..n_states).map(|_| flat_dirichlet(n_actions, rng)).collect() }
}
