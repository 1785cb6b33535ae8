//! Single-worker discrete ACER (no trust region) with an optional
//! demonstration term.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::demo::{Demonstration, Trajectory, TrajectoryBuffer};
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, Action, ActionSpace, Environment, Observation, SimRng};
use crate::nn::{l2_norm, layer_stack, Activation, AdamConfig, AdamState, Mlp};
use crate::pretrain::{combined_gradients, g_pi_star, g_q_star, sampled_advantage_objective, PretrainConfig};
use crate::value::{retrace_from_heads, truncated_ratio, DiscreteHeads, DiscreteModel, RetraceStep, SharedActorCritic, Tail};

use super::StepMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcerConfig {
    /// Importance-weight truncation.
    pub c: f64,
    pub entropy_weight: f64,
    /// Replay memory size in frames.
    pub replay_capacity: usize,
    /// On-policy rollout length per step.
    pub rollout_length: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Off-policy replay updates after each on-policy update.
    pub replay_ratio: usize,
    pub hidden: Vec<usize>,
}

impl Default for AcerConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            entropy_weight: 1e-3,
            replay_capacity: 5000,
            rollout_length: 20,
            gamma: 0.99,
            learning_rate: 1e-3,
            replay_ratio: 4,
            hidden: vec![32],
        }
    }
}

impl AcerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::config("acer c must be positive"));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(Error::config("acer entropy_weight must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("acer gamma must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.rollout_length == 0 {
            return Err(Error::config("acer learning_rate and rollout_length must be positive"));
        }
        Ok(())
    }
}

/// Policy and critic ascent directions for one trajectory, over the model's
/// flat parameter vector, plus the Retrace targets used.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerGradient {
    pub g_pi: Vec<f64>,
    pub g_q: Vec<f64>,
    pub q_ret: Vec<f64>,
}

/// Per-step constants of the ACER update, evaluated at the current parameters.
struct StepTerms {
    /// `rho_bar (Q_ret - V)`, the weight on `grad log pi(a_t)`.
    main: f64,
    /// `[1 - c / rho(a)]_+ pi(a) (Q(a) - V)`, the weight on `grad log pi(a)`.
    correction: Vec<f64>,
}

fn step_terms(h: &DiscreteHeads, step: &RetraceStep, behavior: &[f64], q_ret: f64, c: f64) -> Result<StepTerms> {
    let v = h.value();
    let rho_bar = truncated_ratio(h.probs[step.action], step.behavior_prob, c)?;
    let correction = h
        .probs
        .iter()
        .zip(behavior)
        .zip(&h.q)
        .map(|((&p, &b), &q)| {
            if !(b > 0.0) {
                return Err(Error::numeric(format!("behavior probability {b} must be positive")));
            }
            let rho = p / b;
            let weight = if rho > 0.0 { (1.0 - c / rho).max(0.0) } else { 0.0 };
            Ok(weight * p * (q - v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepTerms { main: rho_bar * (q_ret - v), correction })
}

/// `d H / d logits` for `H = -sum p ln p`: `-p_j (ln p_j + H)`.
fn entropy_logit_grad(logits: &[f64], probs: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = logits.iter().map(|z| z - log_z).collect();
    let h: f64 = -probs.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>();
    probs.iter().zip(&log_p).map(|(p, l)| -p * (l + h)).collect()
}

fn check_trajectory(traj: &Trajectory, n_actions: usize) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::usage("acer gradient needs a nonempty trajectory"));
    }
    if traj.observations.len() != traj.len() || traj.behavior_probs.len() != traj.len() {
        return Err(Error::usage("trajectory fields have mismatched lengths"));
    }
    if traj.behavior_probs.iter().any(|b| b.len() != n_actions) || traj.steps.iter().any(|s| s.action >= n_actions) {
        return Err(Error::usage("trajectory actions do not match the model"));
    }
    Ok(())
}

fn heads_and_targets<M: DiscreteModel + ?Sized>(
    model: &M,
    traj: &Trajectory,
    config: &AcerConfig,
) -> Result<(Vec<DiscreteHeads>, Vec<f64>)> {
    check_trajectory(traj, model.n_actions())?;
    let heads = traj.observations.iter().map(|o| model.heads(o)).collect::<Result<Vec<_>>>()?;
    let tail = if traj.terminal { Tail::Terminal } else { Tail::Bootstrap(model.heads(&traj.final_obs)?.value()) };
    let q_ret = retrace_from_heads(&heads, &traj.steps, tail, config.c, config.gamma)?;
    Ok((heads, q_ret))
}

/// Truncated importance-weighted policy gradient with bias correction and
/// entropy bonus, and the critic gradient toward Retrace targets; both
/// averaged over the trajectory.
pub fn acer_gradient<M: DiscreteModel + ?Sized>(model: &M, traj: &Trajectory, config: &AcerConfig) -> Result<AcerGradient> {
    let (heads, q_ret) = heads_and_targets(model, traj, config)?;
    let n = model.n_actions();
    let scale = 1.0 / traj.len() as f64;
    let mut g_pi = vec![0.0; model.num_params()];
    let mut g_q = vec![0.0; model.num_params()];
    for (t, h) in heads.iter().enumerate() {
        let step = &traj.steps[t];
        let terms = step_terms(h, step, &traj.behavior_probs[t], q_ret[t], config.c)?;
        // grad log pi(a) w.r.t. logits is e_a - p.
        let mut d_logits: Vec<f64> = h.probs.iter().map(|p| -terms.main * p).collect();
        d_logits[step.action] += terms.main;
        let total_corr: f64 = terms.correction.iter().sum();
        for (a, d) in d_logits.iter_mut().enumerate() {
            *d += terms.correction[a] - total_corr * h.probs[a];
        }
        if config.entropy_weight != 0.0 {
            for (d, e) in d_logits.iter_mut().zip(entropy_logit_grad(&h.logits, &h.probs)) {
                *d += config.entropy_weight * e;
            }
        }
        d_logits.iter_mut().for_each(|d| *d *= scale);
        let mut d_q = vec![0.0; n];
        d_q[step.action] = scale * (q_ret[t] - h.q[step.action]);
        model.backward_heads(h, Some(&d_logits), None, &mut g_pi)?;
        model.backward_heads(h, None, Some(&d_q), &mut g_q)?;
    }
    Ok(AcerGradient { g_pi, g_q, q_ret })
}

/// The scalar objectives whose gradients at `model == anchor` are
/// [`acer_gradient`]'s `g_pi` and `g_q`. Every weight (ratios, Retrace
/// targets, values) is frozen at `anchor`; only log-probabilities, the
/// entropy and the Q head vary with `model`.
pub fn acer_surrogate<M: DiscreteModel + ?Sized>(
    model: &M,
    anchor: &M,
    traj: &Trajectory,
    config: &AcerConfig,
) -> Result<(f64, f64)> {
    let (anchor_heads, q_ret) = heads_and_targets(anchor, traj, config)?;
    let scale = 1.0 / traj.len() as f64;
    let (mut policy, mut critic) = (0.0, 0.0);
    for (t, ah) in anchor_heads.iter().enumerate() {
        let step = &traj.steps[t];
        let terms = step_terms(ah, step, &traj.behavior_probs[t], q_ret[t], config.c)?;
        let h = model.heads(&traj.observations[t])?;
        let log_p: Vec<f64> = h.probs.iter().map(|p| p.ln()).collect();
        let entropy: f64 = -h.probs.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>();
        let corr: f64 = terms.correction.iter().zip(&log_p).map(|(w, l)| w * l).sum();
        policy += scale * (terms.main * log_p[step.action] + corr + config.entropy_weight * entropy);
        let err = q_ret[t] - h.q[step.action];
        critic -= scale * 0.5 * err * err;
    }
    Ok((policy, critic))
}

/// Full ACER training state over a shared-trunk actor-critic.
pub struct Acer {
    pub config: AcerConfig,
    pub pretrain: PretrainConfig,
    pub model: SharedActorCritic,
    opt: AdamState,
    buffer: TrajectoryBuffer,
    env: Box<dyn Environment>,
    demos: Option<Demonstration>,
    rng: SimRng,
    demo_rng: SimRng,
    obs: Observation,
    episode_return: f64,
    updates: u64,
    simulation_steps: u64,
}

impl Acer {
    pub fn new(
        mut env: Box<dyn Environment>,
        config: AcerConfig,
        pretrain: PretrainConfig,
        demos: Option<Demonstration>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        pretrain.validate()?;
        let n_actions = match env.action_space() {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous { .. } => return Err(Error::config(format!("acer needs discrete actions; {} is continuous", env.name()))),
        };
        if let Some(d) = &demos {
            d.validate()?;
            crate::error::check_len("demonstration observation size", d.meta.obs_dim, env.obs_dim())?;
        }
        let mut rng = SimRng::seed_from_u64(seed);
        let mut demo_rng = SimRng::seed_from_u64(seed);
        demo_rng.set_stream(1);
        let mut sizes = vec![env.obs_dim()];
        sizes.extend(&config.hidden);
        sizes.push(2 * n_actions);
        let net = Mlp::init(layer_stack(&sizes, Activation::Tanh, Activation::Identity)?, 1e-3, &mut rng)?;
        let model = SharedActorCritic::new(net)?;
        let obs = env.reset(rng.random());
        Ok(Self {
            opt: AdamState::new(model.num_params(), AdamConfig::with_lr(config.learning_rate)),
            buffer: TrajectoryBuffer::new(config.replay_capacity),
            model,
            env,
            demos,
            rng,
            demo_rng,
            obs,
            episode_return: 0.0,
            updates: 0,
            simulation_steps: 0,
            config,
            pretrain,
        })
    }

    pub fn simulation_steps(&self) -> u64 {
        self.simulation_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn rollout(&mut self, metrics: &mut StepMetrics) -> Result<Trajectory> {
        let mut traj = Trajectory {
            observations: Vec::new(),
            steps: Vec::new(),
            behavior_probs: Vec::new(),
            final_obs: Vec::new(),
            terminal: false,
        };
        for _ in 0..self.config.rollout_length {
            let probs = self.model.policy_probs(&self.obs)?;
            let a = sample_categorical(&probs, &mut self.rng);
            let out = self.env.step(&Action::Discrete(a))?;
            self.simulation_steps += 1;
            self.episode_return += out.reward;
            traj.steps.push(RetraceStep { action: a, reward: out.reward, behavior_prob: probs[a] });
            traj.behavior_probs.push(probs);
            let done = out.done();
            traj.observations.push(std::mem::replace(&mut self.obs, out.next_state));
            if done {
                traj.terminal = out.terminal;
                traj.final_obs = self.obs.clone();
                metrics.episode_return = Some(std::mem::take(&mut self.episode_return));
                self.obs = self.env.reset(self.rng.random());
                return Ok(traj);
            }
        }
        traj.final_obs = self.obs.clone();
        Ok(traj)
    }

    fn apply(&mut self, g_pi: &[f64], g_q: &[f64]) -> Result<()> {
        let total: Vec<f64> = g_pi.iter().zip(g_q).map(|(a, b)| a + b).collect();
        self.opt.update(self.model.net.params_mut(), &total)
    }

    /// A k-step on-policy rollout and its update (with demonstration
    /// gradients while the budget lasts), then `replay_ratio` updates on
    /// stored trajectories.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let mut metrics = StepMetrics::default();
        let traj = self.rollout(&mut metrics)?;
        let step = self.updates + 1;
        let grad = acer_gradient(&self.model, &traj, &self.config)?;
        let (g_q, g_pi) = match &self.demos {
            Some(demos) if self.pretrain.is_active(step) => {
                let objective = sampled_advantage_objective(
                    demos,
                    &self.model,
                    self.pretrain.gamma,
                    self.pretrain.demo_batch,
                    &mut self.demo_rng,
                )?;
                metrics.pretraining_active = self.pretrain.lambda_q != 0.0 || self.pretrain.lambda_pi != 0.0;
                if metrics.pretraining_active {
                    metrics.j = Some(objective.value);
                }
                let q_star = g_q_star(&objective, &self.pretrain);
                combined_gradients(&grad.g_q, &grad.g_pi, &q_star, &g_pi_star(&objective), &self.pretrain, step)?
            }
            _ => (grad.g_q, grad.g_pi),
        };
        metrics.critic_grad_norm = l2_norm(&g_q);
        metrics.actor_grad_norm = l2_norm(&g_pi);
        if !(metrics.critic_grad_norm.is_finite() && metrics.actor_grad_norm.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient at update {step}")));
        }
        self.apply(&g_pi, &g_q)?;
        self.buffer.push(traj);
        for _ in 0..self.config.replay_ratio {
            let Some(old) = self.buffer.sample(&mut self.rng) else { break };
            let g = acer_gradient(&self.model, old, &self.config)?;
            let (g_pi, g_q) = (g.g_pi, g.g_q);
            self.apply(&g_pi, &g_q)?;
        }
        self.updates = step;
        metrics.step = step;
        metrics.simulation_steps = self.simulation_steps;
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(seed: u64) -> SharedActorCritic {
        let mut rng = SimRng::seed_from_u64(seed);
        let net = Mlp::init(layer_stack(&[2, 4, 4], Activation::Tanh, Activation::Identity).unwrap(), 1.0, &mut rng).unwrap();
        SharedActorCritic::new(net).unwrap()
    }

    fn on_policy_traj(m: &SharedActorCritic) -> Trajectory {
        let observations = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let behavior_probs: Vec<Vec<f64>> = observations.iter().map(|o| m.policy_probs(o).unwrap()).collect();
        let actions = [0, 1, 1];
        let steps = actions
            .iter()
            .zip(&behavior_probs)
            .enumerate()
            .map(|(t, (&a, b))| RetraceStep { action: a, reward: t as f64 * 0.5, behavior_prob: b[a] })
            .collect();
        Trajectory { observations, steps, behavior_probs, final_obs: vec![0.0, 1.0], terminal: false }
    }

    #[test]
    fn correction_vanishes_on_policy() {
        let m = model(4);
        let traj = on_policy_traj(&m);
        for (t, o) in traj.observations.iter().enumerate() {
            let h = m.heads(o).unwrap();
            let terms = step_terms(&h, &traj.steps[t], &traj.behavior_probs[t], 1.0, 1.0).unwrap();
            assert!(terms.correction.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_behavior_probability_is_numeric_error() {
        let m = model(5);
        let mut traj = on_policy_traj(&m);
        traj.behavior_probs[1][0] = 0.0;
        assert!(matches!(acer_gradient(&m, &traj, &AcerConfig::default()), Err(Error::Numeric(_))));
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform() {
        let g = entropy_logit_grad(&[0.3, 0.3, 0.3], &[1.0 / 3.0; 3]);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn continuous_env_is_a_config_error() {
        let env = crate::mdp::make_builtin("point_mass", &Default::default()).unwrap();
        let r = Acer::new(env, AcerConfig::default(), PretrainConfig::default(), None, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
