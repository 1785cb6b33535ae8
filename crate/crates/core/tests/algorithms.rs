use acpretrain::algo::{acer_gradient, Acer, AcerConfig, Ddpg, DdpgConfig, StepMetrics};
use acpretrain::demo::{record_demonstrations, Trajectory};
use acpretrain::error::Result;
use acpretrain::mdp::{make_builtin, one_hot, Action, ActionSpace, EnvParams, EnvStep, Environment, Observation, SimRng};
use acpretrain::nn::{layer_stack, Activation, Mlp};
use acpretrain::oracle::optimal_policy;
use acpretrain::policy::TablePolicy;
use acpretrain::pretrain::PretrainConfig;
use acpretrain::value::{DiscreteModel, RetraceStep, SharedActorCritic};
use rand::{Rng, SeedableRng};

/// One state, one action dimension, reward 1 forever.
struct Constant {
    t: usize,
}

impl Environment for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] }
    }
    fn max_steps(&self) -> usize {
        50
    }
    fn reset(&mut self, _seed: u64) -> Observation {
        self.t = 0;
        vec![1.0]
    }
    fn step(&mut self, _action: &Action) -> Result<EnvStep> {
        self.t += 1;
        Ok(EnvStep { next_state: vec![1.0], reward: 1.0, terminal: false, truncated: self.t >= 50 })
    }
}

#[test]
fn ddpg_critic_reaches_the_geometric_fixed_point() {
    let gamma = 0.9;
    let config = DdpgConfig {
        gamma,
        critic_lr: 1e-2,
        tau: 0.05,
        weight_decay: 0.0,
        warmup: 32,
        hidden: vec![8],
        ..DdpgConfig::default()
    };
    let mut ddpg = Ddpg::new(Box::new(Constant { t: 0 }), config, PretrainConfig::default(), None, 3).unwrap();
    while ddpg.simulation_steps() < 10_000 {
        ddpg.step().unwrap();
    }
    let want = 1.0 / (1.0 - gamma);
    for a in [-1.0, -0.3, 0.0, 0.5, 1.0] {
        let q = ddpg.model.critic.value(&[1.0], &[a]).unwrap();
        assert!((q - want).abs() <= 0.01 * want, "Q(s, {a}) = {q}, want {want}");
    }
}

fn chain_demos() -> acpretrain::demo::Demonstration {
    let mut env = make_builtin("chain", &EnvParams { max_steps: 40, ..EnvParams::default() }).unwrap();
    let expert = optimal_policy(env.tabular().unwrap());
    record_demonstrations(&expert, env.as_mut(), 5, 1).unwrap()
}

fn acer_metrics(pretrain: PretrainConfig, demos: Option<acpretrain::demo::Demonstration>, n: usize) -> (Vec<StepMetrics>, Vec<f64>) {
    let env = make_builtin("chain", &EnvParams::default()).unwrap();
    let mut acer = Acer::new(env, AcerConfig::default(), pretrain, demos, 8).unwrap();
    let metrics = (0..n).map(|_| acer.step().unwrap()).collect();
    (metrics, acer.model.params())
}

#[test]
fn zero_weights_reproduce_the_baseline_acer() {
    let off = PretrainConfig { lambda_q: 0.0, lambda_pi: 0.0, ..PretrainConfig::default() };
    let (base_m, base_p) = acer_metrics(PretrainConfig::default(), None, 50);
    let (zero_m, zero_p) = acer_metrics(off, Some(chain_demos()), 50);
    assert_eq!(base_p, zero_p);
    assert_eq!(base_m.iter().map(|m| m.critic_grad_norm).collect::<Vec<_>>(), zero_m.iter().map(|m| m.critic_grad_norm).collect::<Vec<_>>());
    assert!(zero_m.iter().all(|m| !m.pretraining_active));
}

#[test]
fn acer_logs_j_only_inside_the_budget() {
    let cfg = PretrainConfig { pretrain_steps: 10, ..PretrainConfig::default() };
    let (metrics, _) = acer_metrics(cfg, Some(chain_demos()), 20);
    for m in &metrics {
        assert_eq!(m.pretraining_active, m.step <= 10, "step {}", m.step);
        assert_eq!(m.j.is_some(), m.pretraining_active, "step {}", m.step);
    }
}

#[test]
fn ddpg_zero_weights_reproduce_the_baseline() {
    let params = EnvParams::default();
    let mut env = make_builtin("point_mass", &params).unwrap();
    let zero = TowardOrigin;
    let demos = record_demonstrations(&zero, env.as_mut(), 2, 4).unwrap();
    let config = DdpgConfig { warmup: 100, ..DdpgConfig::default() };
    let off = PretrainConfig { lambda_q: 0.0, lambda_pi: 0.0, ..PretrainConfig::default() };
    let run = |pretrain: PretrainConfig, demos| {
        let mut d = Ddpg::new(make_builtin("point_mass", &params).unwrap(), config.clone(), pretrain, demos, 5).unwrap();
        for _ in 0..400 {
            d.step().unwrap();
        }
        (d.model.actor.net.params().to_vec(), d.model.critic.net.params().to_vec())
    };
    assert_eq!(run(PretrainConfig::default(), None), run(off, Some(demos.clone())));
    assert_ne!(run(PretrainConfig::default(), None), run(PretrainConfig::default(), Some(demos)));
}

/// Pushes toward the origin; only used to produce a well-formed demonstration.
struct TowardOrigin;

impl acpretrain::policy::Actor for TowardOrigin {
    fn act(&self, obs: &[f64], _rng: &mut dyn rand::RngCore) -> Result<Action> {
        Ok(Action::Continuous(vec![(-obs[0]).clamp(-1.0, 1.0), (-obs[1]).clamp(-1.0, 1.0)]))
    }
    fn tag(&self) -> String {
        "toward-origin".into()
    }
}

/// With a uniform learner and a nearly greedy behaviour policy, the policy
/// gradient is bounded by quantities read off the same trajectory.
#[test]
fn acer_gradient_respects_the_truncation_bound() {
    let (n_states, n_actions) = (3, 2);
    let mut rng = SimRng::seed_from_u64(21);
    let layers = layer_stack(&[n_states, 2 * n_actions], Activation::Identity, Activation::Identity).unwrap();
    let mut params: Vec<f64> = (0..layers[0].param_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
    // Zero the logit rows so the policy is uniform in every state.
    for o in 0..n_actions {
        for s in 0..n_states {
            params[o * n_states + s] = 0.0;
        }
        params[2 * n_actions * n_states + o] = 0.0;
    }
    let model = SharedActorCritic::new(Mlp::from_params(layers, params).unwrap()).unwrap();
    let eps = 1e-6;
    let greedy = TablePolicy::deterministic(&[1, 0, 1], n_actions);
    let states = [0usize, 1, 2, 2, 0];
    let mut behavior_probs = Vec::new();
    let mut steps = Vec::new();
    for &s in &states {
        let b: Vec<f64> = greedy.probs[s].iter().map(|p| p * (1.0 - 2.0 * eps) + eps).collect();
        let a = acpretrain::policy::argmax(&b);
        steps.push(RetraceStep { action: a, reward: rng.random_range(-1.0..1.0), behavior_prob: b[a] });
        behavior_probs.push(b);
    }
    let traj = Trajectory {
        observations: states.iter().map(|&s| one_hot(s, n_states)).collect(),
        steps,
        behavior_probs,
        final_obs: one_hot(1, n_states),
        terminal: false,
    };
    let c = 10.0;
    let config = AcerConfig { c, entropy_weight: 0.0, gamma: 0.9, ..AcerConfig::default() };
    let g = acer_gradient(&model, &traj, &config).unwrap();

    let mut max_main = 0.0f64;
    let mut max_corr = 0.0f64;
    let mut max_grad_log = 0.0f64;
    for (t, obs) in traj.observations.iter().enumerate() {
        let h = model.heads(obs).unwrap();
        let v = h.value();
        max_main = max_main.max((g.q_ret[t] - v).abs());
        max_corr = max_corr.max(h.probs.iter().zip(&h.q).map(|(p, q)| p * (q - v).abs()).sum());
        for a in 0..n_actions {
            let d: Vec<f64> = (0..n_actions).map(|j| f64::from(u8::from(j == a)) - h.probs[j]).collect();
            let mut grad = vec![0.0; model.num_params()];
            model.backward_heads(&h, Some(&d), None, &mut grad).unwrap();
            max_grad_log = max_grad_log.max(grad.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    let norm = g.g_pi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bound = (c * max_main + max_corr) * max_grad_log;
    assert!(norm > 0.0);
    assert!(norm <= bound, "|g_pi| {norm} exceeds {bound}");
}
