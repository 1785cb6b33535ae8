//! Deep deterministic policy gradient with an optional demonstration term.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::demo::{Demonstration, ReplayBuffer, Transition};
use crate::error::{check_len, Error, Result};
use crate::mdp::{Action, ActionSpace, Environment, Observation, SimRng};
use crate::nn::{axpy, l2_norm, layer_stack, Activation, AdamConfig, AdamState, Mlp};
use crate::policy::{DeterministicPolicy, ExplorationNoise, NoiseKind};
use crate::pretrain::{
    combined_gradients, g_pi_star, g_q_star, sampled_advantage_objective, PretrainConfig,
};
use crate::value::{soft_update, ContinuousActorCritic, QNetContinuous};

use super::StepMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub noise_scale: f64,
    pub noise_kind: NoiseKind,
    /// L2 penalty on the critic weights.
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    /// Environment steps taken with uniform random actions before updates begin.
    pub warmup: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-4,
            tau: 0.005,
            batch_size: 32,
            buffer_capacity: 100_000,
            gamma: 0.99,
            noise_scale: 0.1,
            noise_kind: NoiseKind::Gaussian,
            weight_decay: 1e-2,
            hidden: vec![32, 32],
            warmup: 1000,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("ddpg learning rates and tau must be positive (tau <= 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("ddpg gamma must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("ddpg batch_size must be positive and fit in the buffer"));
        }
        if !(self.noise_scale >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::config("ddpg noise_scale and weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Mean over `states` of `grad_a Q(s, a)|_{a = pi(s)} . grad_theta pi(s)`.
pub fn ddpg_actor_gradient(states: &[&[f64]], q: &QNetContinuous, policy: &DeterministicPolicy) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::usage("actor gradient needs a nonempty batch"));
    }
    let scale = 1.0 / states.len() as f64;
    let mut grad = vec![0.0; policy.net.num_params()];
    let mut scratch = vec![0.0; q.net.num_params()];
    for s in states {
        let (a, tape) = policy.act_with_tape(s)?;
        let (_, q_tape) = q.value_with_tape(s, &a)?;
        let d_action = q.backward(&q_tape, scale, &mut scratch)?;
        policy.backward(&tape, &d_action, &mut grad)?;
    }
    Ok(grad)
}

/// Full DDPG training state.
pub struct Ddpg {
    pub config: DdpgConfig,
    pub pretrain: PretrainConfig,
    pub model: ContinuousActorCritic,
    target_actor: DeterministicPolicy,
    target_critic: QNetContinuous,
    actor_opt: AdamState,
    critic_opt: AdamState,
    buffer: ReplayBuffer,
    noise: ExplorationNoise,
    env: Box<dyn Environment>,
    demos: Option<Demonstration>,
    rng: SimRng,
    demo_rng: SimRng,
    obs: Observation,
    episode_return: f64,
    updates: u64,
    simulation_steps: u64,
}

impl Ddpg {
    pub fn new(
        mut env: Box<dyn Environment>,
        config: DdpgConfig,
        pretrain: PretrainConfig,
        demos: Option<Demonstration>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        pretrain.validate()?;
        let (low, high) = match env.action_space() {
            ActionSpace::Continuous { low, high } => (low, high),
            ActionSpace::Discrete(_) => return Err(Error::config(format!("ddpg needs continuous actions; {} is discrete", env.name()))),
        };
        if let Some(d) = &demos {
            d.validate()?;
            check_len("demonstration observation size", d.meta.obs_dim, env.obs_dim())?;
        }
        let mut rng = SimRng::seed_from_u64(seed);
        let mut demo_rng = SimRng::seed_from_u64(seed);
        demo_rng.set_stream(1);
        let obs_dim = env.obs_dim();
        let act_dim = low.len();
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(act_dim);
        let actor_net = Mlp::init(layer_stack(&actor_sizes, Activation::Tanh, Activation::Tanh)?, 1e-3, &mut rng)?;
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let critic_net = Mlp::init(layer_stack(&critic_sizes, Activation::Tanh, Activation::Identity)?, 1e-3, &mut rng)?;
        let actor = DeterministicPolicy::new(actor_net, low, high)?;
        let critic = QNetContinuous::new(critic_net, obs_dim)?;
        let noise_scale = vec![config.noise_scale; act_dim];
        let noise = match config.noise_kind {
            NoiseKind::Gaussian => ExplorationNoise::gaussian(noise_scale),
            NoiseKind::Ou => ExplorationNoise::ou(noise_scale, 0.15),
        };
        let obs = env.reset(rng.random());
        Ok(Self {
            actor_opt: AdamState::new(actor.net.num_params(), AdamConfig::with_lr(config.actor_lr)),
            critic_opt: AdamState::new(critic.net.num_params(), AdamConfig::with_lr(config.critic_lr)),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            model: ContinuousActorCritic { actor, critic },
            buffer: ReplayBuffer::new(config.buffer_capacity),
            noise,
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

    /// One environment step, then one critic and one actor update once the
    /// warm-up is over and the buffer holds a batch.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let action = if (self.simulation_steps as usize) < self.config.warmup {
            self.model
                .actor
                .action_low
                .iter()
                .zip(&self.model.actor.action_high)
                .map(|(&l, &h)| self.rng.random_range(l..h))
                .collect()
        } else {
            self.model.actor.sample_action(&self.obs, &mut self.noise, &mut self.rng)?
        };
        let out = self.env.step(&Action::Continuous(action.clone()))?;
        self.simulation_steps += 1;
        self.episode_return += out.reward;
        let done = out.done();
        let next = out.next_state;
        self.buffer.push(Transition {
            obs: std::mem::replace(&mut self.obs, next.clone()),
            action,
            reward: out.reward,
            next_obs: next,
            terminal: out.terminal,
            behavior_prob: 1.0,
        });
        let mut metrics = StepMetrics { simulation_steps: self.simulation_steps, ..Default::default() };
        if done {
            metrics.episode_return = Some(std::mem::take(&mut self.episode_return));
            self.obs = self.env.reset(self.rng.random());
            self.noise.reset();
        }
        if self.simulation_steps as usize >= self.config.warmup && self.buffer.len() >= self.config.batch_size {
            self.update(&mut metrics)?;
        }
        metrics.step = self.updates;
        Ok(metrics)
    }

    fn update(&mut self, metrics: &mut StepMetrics) -> Result<()> {
        let step = self.updates + 1;
        let pretraining = match &self.demos {
            Some(demos) if self.pretrain.is_active(step) => Some(sampled_advantage_objective(
                demos,
                &self.model,
                self.pretrain.gamma,
                self.pretrain.demo_batch,
                &mut self.demo_rng,
            )?),
            _ => None,
        };
        let batch = self.buffer.sample_batch(self.config.batch_size, &mut self.rng)?;
        let scale = 1.0 / batch.len() as f64;
        let critic = &self.model.critic;
        let mut g_q = vec![0.0; critic.net.num_params()];
        for t in &batch {
            let bootstrap = if t.terminal {
                0.0
            } else {
                let a_next = self.target_actor.act_deterministic(&t.next_obs)?;
                self.target_critic.value(&t.next_obs, &a_next)?
            };
            let target = t.reward + self.config.gamma * bootstrap;
            if !target.is_finite() {
                return Err(Error::numeric(format!("non-finite critic target at update {step}")));
            }
            let (value, tape) = critic.value_with_tape(&t.obs, &t.action)?;
            critic.backward(&tape, scale * (target - value), &mut g_q)?;
        }
        axpy(&mut g_q, -self.config.weight_decay, critic.net.params());

        // Both gradients are taken at the same parameters, then applied together.
        let states: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let g_pi = ddpg_actor_gradient(&states, critic, &self.model.actor)?;
        let (g_q, g_pi) = match &pretraining {
            Some(objective) => {
                metrics.pretraining_active = self.pretrain.lambda_q != 0.0 || self.pretrain.lambda_pi != 0.0;
                if metrics.pretraining_active {
                    metrics.j = Some(objective.value);
                }
                let q_star = g_q_star(objective, &self.pretrain);
                combined_gradients(&g_q, &g_pi, &q_star, &g_pi_star(objective), &self.pretrain, step)?
            }
            None => (g_q, g_pi),
        };
        self.critic_opt.update(self.model.critic.net.params_mut(), &g_q)?;
        self.actor_opt.update(self.model.actor.net.params_mut(), &g_pi)?;
        soft_update(&mut self.target_critic.net, &self.model.critic.net, self.config.tau)?;
        soft_update(&mut self.target_actor.net, &self.model.actor.net, self.config.tau)?;
        metrics.critic_grad_norm = l2_norm(&g_q);
        metrics.actor_grad_norm = l2_norm(&g_pi);
        if !(metrics.critic_grad_norm.is_finite() && metrics.actor_grad_norm.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient at update {step}")));
        }
        self.updates = step;
        Ok(())
    }

    /// Mean noise-free return over the given episode seeds, on a fresh copy of the environment.
    pub fn evaluate(&self, env: &mut dyn Environment, seeds: &[u64]) -> Result<f64> {
        super::evaluate_deterministic(env, &self.model.actor, seeds)
    }
}
