//! Verification sweeps behind the `verify` subcommand: the performance
//! difference identity on random MDPs, gradient checks against finite
//! differences, and Retrace against a direct recursion on stored fixtures.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::algo::{acer_gradient, acer_surrogate, ddpg_actor_gradient, AcerConfig};
use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::mdp::{one_hot, Action, SimRng};
use crate::nn::{layer_stack, Activation, Mlp};
use crate::oracle::{finite_difference, max_relative_error, random_mdp, random_policy, verify_theorem1};
use crate::policy::{DeterministicPolicy, SoftmaxPolicy};
use crate::pretrain::{g_pi_star, weighted_advantage_objective, AdvantageObjective, WeightedPair};
use crate::value::{
    retrace_from_heads, td_gradient_continuous, td_gradient_discrete, ContinuousActorCritic, DiscreteHeads,
    DiscreteModel, QNetContinuous, QNetDiscrete, RetraceStep, SharedActorCritic, SplitActorCritic, Tail,
};

pub const THEOREM1_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const FD_EPSILON: f64 = 1e-5;
pub const RETRACE_TOLERANCE: f64 = 1e-12;

/// One line of a certificate: what was checked, the measured error, the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateRow {
    pub check: String,
    pub detail: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CertificateRow {
    fn new(check: impl Into<String>, detail: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self { check: check.into(), detail: detail.into(), error, tolerance, pass: error <= tolerance }
    }
}

/// Performance-difference identity on `count` random MDPs (|S| <= 6, |A| <= 4, gamma 0.9).
pub fn theorem1_suite(seed: u64, count: usize) -> Result<Vec<CertificateRow>> {
    (0..count as u64)
        .map(|i| {
            let mut rng = SimRng::seed_from_u64(seed.wrapping_add(i));
            let n_s = rng.random_range(1..=6);
            let n_a = rng.random_range(1..=4);
            let mdp = random_mdp(n_s, n_a, 0.9, &mut rng)?;
            let pi_star = random_policy(n_s, n_a, &mut rng);
            let pi = random_policy(n_s, n_a, &mut rng);
            let check = verify_theorem1(&mdp, &pi_star, &pi)?;
            Ok(CertificateRow::new(
                "theorem1",
                format!("seed={} states={n_s} actions={n_a} lhs={:e} rhs={:e}", seed.wrapping_add(i), check.lhs, check.rhs),
                check.gap,
                THEOREM1_TOLERANCE,
            ))
        })
        .collect()
}

fn random_net(sizes: &[usize], output: Activation, rng: &mut SimRng) -> Result<Mlp> {
    Mlp::init(layer_stack(sizes, Activation::Tanh, output)?, 1.0, rng)
}

fn random_vec(n: usize, scale: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn grad_row(name: &str, analytic: &[f64], numeric: &[f64]) -> CertificateRow {
    CertificateRow::new(
        "gradient",
        format!("{name} ({} params)", analytic.len()),
        max_relative_error(analytic, numeric),
        GRADIENT_TOLERANCE,
    )
}

struct OwnedPair {
    obs: Vec<f64>,
    action: Action,
    weight: f64,
}

fn borrow_pairs(pairs: &[OwnedPair]) -> Vec<WeightedPair<'_>> {
    pairs.iter().map(|p| WeightedPair { obs: &p.obs, action: &p.action, weight: p.weight }).collect()
}

/// Every analytic gradient in the library against central differences on
/// small random networks.
pub fn gradient_suite(seed: u64) -> Result<Vec<CertificateRow>> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut rows = Vec::new();

    // Network backward against its own forward.
    let net = random_net(&[3, 5, 4, 2], Activation::Identity, &mut rng)?;
    let x = random_vec(3, 1.0, &mut rng);
    let cot = random_vec(2, 1.0, &mut rng);
    let (g, dx) = net.backward(&x, &cot)?;
    let fd = finite_difference(|p| dot_forward(&net.with_params(p)?, &x, &cot), net.params(), FD_EPSILON)?;
    rows.push(grad_row("mlp backward (params)", &g, &fd));
    let fd = finite_difference(|xx| dot_forward(&net, xx, &cot), &x, FD_EPSILON)?;
    rows.push(grad_row("mlp backward (input)", &dx, &fd));

    // Discrete demonstration objective on separate actor and critic networks.
    let (obs_dim, n_a) = (3, 3);
    let split = SplitActorCritic::new(
        SoftmaxPolicy::new(random_net(&[obs_dim, 4, n_a], Activation::Identity, &mut rng)?),
        QNetDiscrete::new(random_net(&[obs_dim, 4, n_a], Activation::Identity, &mut rng)?),
    )?;
    let pairs: Vec<OwnedPair> = (0..4)
        .map(|t| OwnedPair {
            obs: random_vec(obs_dim, 1.0, &mut rng),
            action: Action::Discrete(rng.random_range(0..n_a)),
            weight: 0.9f64.powi(t) / 2.0,
        })
        .collect();
    let obj = weighted_advantage_objective(&borrow_pairs(&pairs), &split)?;
    let theta_len = split.theta_len();
    let j_of = |p: &[f64]| -> Result<f64> {
        let mut m = split.clone();
        m.set_params(p)?;
        Ok(weighted_advantage_objective(&borrow_pairs(&pairs), &m)?.value)
    };
    let fd = finite_difference(j_of, &split.params(), FD_EPSILON)?;
    rows.push(grad_row("advantage objective grad_theta (discrete)", &obj.grad_theta[..theta_len], &fd[..theta_len]));
    rows.push(grad_row("advantage objective grad_w (discrete)", &obj.grad_w[theta_len..], &fd[theta_len..]));
    rows.push(CertificateRow::new(
        "gradient",
        "advantage objective path separation (discrete)",
        obj.grad_theta[theta_len..].iter().chain(&obj.grad_w[..theta_len]).map(|x| x.abs()).fold(0.0, f64::max),
        0.0,
    ));
    let neg_fd: Vec<f64> = fd[..theta_len].iter().map(|g| -g).collect();
    rows.push(grad_row("g_pi_star (discrete)", &g_pi_star(&obj)[..theta_len], &neg_fd));

    // Shared trunk: the two paths must sum to the total gradient.
    let shared = SharedActorCritic::new(random_net(&[obs_dim, 5, 2 * n_a], Activation::Identity, &mut rng)?)?;
    let obj = weighted_advantage_objective(&borrow_pairs(&pairs), &shared)?;
    let fd = finite_difference(
        |p| {
            let mut m = shared.clone();
            m.set_params(p)?;
            Ok(weighted_advantage_objective(&borrow_pairs(&pairs), &m)?.value)
        },
        &shared.params(),
        FD_EPSILON,
    )?;
    let total: Vec<f64> = obj.grad_w.iter().zip(&obj.grad_theta).map(|(a, b)| a + b).collect();
    rows.push(grad_row("advantage objective grad_w + grad_theta (shared trunk)", &total, &fd));

    // Continuous demonstration objective.
    let model = ContinuousActorCritic {
        actor: DeterministicPolicy::new(random_net(&[obs_dim, 4, 2], Activation::Tanh, &mut rng)?, vec![-1.0, -0.5], vec![1.0, 2.0])?,
        critic: QNetContinuous::new(random_net(&[obs_dim + 2, 5, 1], Activation::Identity, &mut rng)?, obs_dim)?,
    };
    let cpairs: Vec<OwnedPair> = (0..4)
        .map(|t| OwnedPair {
            obs: random_vec(obs_dim, 1.0, &mut rng),
            action: Action::Continuous(vec![rng.random_range(-1.0..1.0), rng.random_range(-0.5..2.0)]),
            weight: 0.9f64.powi(t) / 2.0,
        })
        .collect();
    let obj: AdvantageObjective = weighted_advantage_objective(&borrow_pairs(&cpairs), &model)?;
    let fd_w = finite_difference(
        |p| {
            let mut m = model.clone();
            m.critic.net.set_params(p)?;
            Ok(weighted_advantage_objective(&borrow_pairs(&cpairs), &m)?.value)
        },
        model.critic.net.params(),
        FD_EPSILON,
    )?;
    rows.push(grad_row("advantage objective grad_w (continuous)", &obj.grad_w, &fd_w));
    let fd_theta = finite_difference(
        |p| {
            let mut m = model.clone();
            m.actor.net.set_params(p)?;
            Ok(weighted_advantage_objective(&borrow_pairs(&cpairs), &m)?.value)
        },
        model.actor.net.params(),
        FD_EPSILON,
    )?;
    rows.push(grad_row("advantage objective grad_theta (continuous)", &obj.grad_theta, &fd_theta));
    let neg: Vec<f64> = fd_theta.iter().map(|g| -g).collect();
    rows.push(grad_row("g_pi_star (continuous)", &g_pi_star(&obj), &neg));

    // Deterministic policy gradient.
    let states: Vec<Vec<f64>> = (0..5).map(|_| random_vec(obs_dim, 1.0, &mut rng)).collect();
    let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    let g = ddpg_actor_gradient(&refs, &model.critic, &model.actor)?;
    let fd = finite_difference(
        |p| {
            let actor = DeterministicPolicy { net: model.actor.net.with_params(p)?, ..model.actor.clone() };
            let mut total = 0.0;
            for s in &refs {
                total += model.critic.value(s, &actor.act_deterministic(s)?)?;
            }
            Ok(total / refs.len() as f64)
        },
        model.actor.net.params(),
        FD_EPSILON,
    )?;
    rows.push(grad_row("ddpg actor gradient", &g, &fd));

    // Score function.
    let pi = &split.policy;
    let s = random_vec(obs_dim, 1.0, &mut rng);
    let g = pi.log_prob_grad(&s, 1)?;
    let fd = finite_difference(|p| SoftmaxPolicy::new(pi.net.with_params(p)?).log_prob(&s, 1), pi.net.params(), FD_EPSILON)?;
    rows.push(grad_row("log_prob_grad", &g, &fd));

    // TD gradients, as ascent on -(target - Q)^2 / 2.
    let (a, target) = (vec![0.3, 1.1], 0.7);
    let g = td_gradient_continuous(&model.critic, &s, &a, target)?;
    let fd = finite_difference(
        |p| {
            let q = QNetContinuous::new(model.critic.net.with_params(p)?, obs_dim)?;
            let e = target - q.value(&s, &a)?;
            Ok(-0.5 * e * e)
        },
        model.critic.net.params(),
        FD_EPSILON,
    )?;
    rows.push(grad_row("td_gradient (continuous)", &g, &fd));
    let qd = &split.q;
    let g = td_gradient_discrete(qd, &s, 2, target)?;
    let fd = finite_difference(
        |p| {
            let e = target - QNetDiscrete::new(qd.net.with_params(p)?).q_values(&s)?[2];
            Ok(-0.5 * e * e)
        },
        qd.net.params(),
        FD_EPSILON,
    )?;
    rows.push(grad_row("td_gradient (discrete)", &g, &fd));

    // ACER against its frozen-weight surrogate on a 2-state, 2-action instance,
    // off-policy enough that some ratios exceed c.
    let acer_model = SharedActorCritic::new(random_net(&[2, 4, 4], Activation::Identity, &mut rng)?)?;
    let traj = Trajectory {
        observations: vec![one_hot(0, 2), one_hot(1, 2), one_hot(0, 2), one_hot(1, 2)],
        steps: vec![
            RetraceStep { action: 0, reward: 0.0, behavior_prob: 0.9 },
            RetraceStep { action: 1, reward: 1.0, behavior_prob: 0.2 },
            RetraceStep { action: 1, reward: 0.0, behavior_prob: 0.1 },
            RetraceStep { action: 0, reward: 1.0, behavior_prob: 0.6 },
        ],
        behavior_probs: vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.9, 0.1], vec![0.6, 0.4]],
        final_obs: one_hot(0, 2),
        terminal: false,
    };
    let cfg = AcerConfig { c: 1.5, entropy_weight: 0.05, gamma: 0.9, ..Default::default() };
    let grad = acer_gradient(&acer_model, &traj, &cfg)?;
    let surrogate = |p: &[f64], which: usize| -> Result<f64> {
        let mut m = acer_model.clone();
        m.set_params(p)?;
        let (pol, crit) = acer_surrogate(&m, &acer_model, &traj, &cfg)?;
        Ok(if which == 0 { pol } else { crit })
    };
    let fd = finite_difference(|p| surrogate(p, 0), &acer_model.params(), FD_EPSILON)?;
    rows.push(grad_row("acer policy gradient vs surrogate", &grad.g_pi, &fd));
    let fd = finite_difference(|p| surrogate(p, 1), &acer_model.params(), FD_EPSILON)?;
    rows.push(grad_row("acer critic gradient vs surrogate", &grad.g_q, &fd));

    Ok(rows)
}

fn dot_forward(net: &Mlp, x: &[f64], cot: &[f64]) -> Result<f64> {
    Ok(net.forward(x)?.iter().zip(cot).map(|(y, c)| y * c).sum())
}

/// A stored Retrace test case: raw head values per step, so no network is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetraceFixture {
    pub name: String,
    pub logits: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub behavior_probs: Vec<f64>,
    /// `None` for a terminal end, otherwise the bootstrap value `V(s_T)`.
    pub bootstrap: Option<f64>,
    pub c: f64,
    pub gamma: f64,
}

/// The fixtures shipped with the crate.
pub fn retrace_fixtures() -> Result<Vec<RetraceFixture>> {
    Ok(serde_json::from_str(include_str!("../fixtures/retrace.json"))?)
}

impl RetraceFixture {
    fn heads(&self) -> Result<Vec<DiscreteHeads>> {
        self.logits.iter().zip(&self.q).map(|(l, q)| DiscreteHeads::detached(l.clone(), q.clone())).collect()
    }

    fn steps(&self) -> Vec<RetraceStep> {
        (0..self.actions.len())
            .map(|t| RetraceStep { action: self.actions[t], reward: self.rewards[t], behavior_prob: self.behavior_probs[t] })
            .collect()
    }
}

/// `Q_ret(t)` straight from its definition, recursing forward in time:
/// `r_t + gamma (rho_bar_{t+1} (Q_ret(t+1) - Q_{t+1}) + V_{t+1})`, with the
/// tail value past the last step.
pub fn retrace_direct(fixture: &RetraceFixture, t: usize) -> Result<f64> {
    let heads = fixture.heads()?;
    let steps = fixture.steps();
    fn go(heads: &[DiscreteHeads], steps: &[RetraceStep], tail: f64, c: f64, gamma: f64, t: usize) -> Result<f64> {
        let next = if t + 1 == steps.len() {
            tail
        } else {
            let h = &heads[t + 1];
            let a = steps[t + 1].action;
            let rho = crate::value::truncated_ratio(h.probs[a], steps[t + 1].behavior_prob, c)?;
            rho * (go(heads, steps, tail, c, gamma, t + 1)? - h.q[a]) + h.value()
        };
        Ok(steps[t].reward + gamma * next)
    }
    go(&heads, &steps, fixture.bootstrap.unwrap_or(0.0), fixture.c, fixture.gamma, t)
}

/// Library Retrace against the direct recursion on every fixture and step.
pub fn retrace_suite() -> Result<Vec<CertificateRow>> {
    let mut rows = Vec::new();
    for f in retrace_fixtures()? {
        let tail = f.bootstrap.map_or(Tail::Terminal, Tail::Bootstrap);
        let got = retrace_from_heads(&f.heads()?, &f.steps(), tail, f.c, f.gamma)?;
        for (t, g) in got.iter().enumerate() {
            let want = retrace_direct(&f, t)?;
            rows.push(CertificateRow::new(
                "retrace",
                format!("{} t={t} library={g:e} direct={want:e} bitwise={}", f.name, g.to_bits() == want.to_bits()),
                (g - want).abs(),
                RETRACE_TOLERANCE,
            ));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Gradients,
    Retrace,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1" => Ok(Suite::Theorem1),
            "gradients" => Ok(Suite::Gradients),
            "retrace" => Ok(Suite::Retrace),
            other => Err(Error::config(format!("unknown suite {other:?}; expected theorem1, gradients or retrace"))),
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CertificateRow>> {
    match suite {
        Suite::Theorem1 => theorem1_suite(seed, 20),
        Suite::Gradients => gradient_suite(seed),
        Suite::Retrace => retrace_suite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse_and_are_short() {
        let f = retrace_fixtures().unwrap();
        assert!(!f.is_empty());
        assert!(f.iter().all(|x| (1..=5).contains(&x.actions.len())));
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("retrace".parse::<Suite>().unwrap(), Suite::Retrace);
        assert!(matches!("bogus".parse::<Suite>(), Err(Error::Config(_))));
    }
}
