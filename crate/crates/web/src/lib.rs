//! Browser bindings: three small experiments that run entirely client-side.
//!
//! Each exported function returns a JSON string; the page in `www/` draws it.

use acpretrain::config::{ExperimentConfig, Variant};
use acpretrain::error::{Error, Result};
use acpretrain::experiment::{run_single, train_expert};
use acpretrain::mdp::{make_builtin, Action, EnvParams, SimRng};
use acpretrain::oracle::{random_mdp, random_policy, solve_policy, verify_theorem1};
use rand::SeedableRng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest training run the page may request, to keep the tab responsive.
pub const MAX_STEPS: u64 = 20_000;

/// Random MDP, random expert and learner; both sides of the performance-difference identity.
pub fn performance_gap_value(seed: u64, n_states: usize, n_actions: usize) -> Result<Value> {
    if !(1..=8).contains(&n_states) || !(1..=6).contains(&n_actions) {
        return Err(Error::Config("use 1-8 states and 1-6 actions".into()));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mdp = random_mdp(n_states, n_actions, 0.9, &mut rng)?;
    let pi_star = random_policy(n_states, n_actions, &mut rng);
    let pi = random_policy(n_states, n_actions, &mut rng);
    let check = verify_theorem1(&mdp, &pi_star, &pi)?;
    let expert = solve_policy(&mdp, &pi_star)?;
    let learner = solve_policy(&mdp, &pi)?;
    Ok(json!({
        "eta_expert": expert.eta,
        "eta_learner": learner.eta,
        "lhs": check.lhs,
        "rhs": check.rhs,
        "gap": check.gap,
        "expert_occupancy": expert.occupancy,
        "learner_advantage": learner.advantage,
        "expert_policy": pi_star.probs,
    }))
}

fn curve(rows: &[acpretrain::experiment::CurveRow]) -> Vec<[f64; 2]> {
    rows.iter().map(|r| [r.simulation_steps as f64, r.score]).collect()
}

/// Trains a suboptimal chain expert, then baseline and pretrained ACER from the same seed.
pub fn chain_comparison_value(seed: u64, steps: u64, lambda: f64) -> Result<Value> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::Config(format!("steps must be in 1..={MAX_STEPS}")));
    }
    let mut cfg = ExperimentConfig { total_steps: steps, eval_every: 50, ..ExperimentConfig::default() };
    cfg.demos.episodes = 20;
    cfg.demos.expert_seed = seed.wrapping_add(1000);
    cfg.pretrain.lambda_q = lambda;
    cfg.pretrain.lambda_pi = lambda;
    cfg.validate()?;
    let (expert, _) = train_expert(&cfg)?;
    let base = run_single(&cfg, Variant::Baseline, seed, None)?;
    let pre = run_single(&cfg, Variant::Pretrained, seed, Some(&expert.demos))?;
    Ok(json!({
        "expert_score": expert.score,
        "threshold": cfg.threshold,
        "baseline": curve(&base.rows),
        "pretrained": curve(&pre.rows),
        "baseline_steps": base.steps_to_threshold,
        "pretrained_steps": pre.steps_to_threshold,
    }))
}

/// One point-mass episode under a PD controller `a = clip(-kp p - kd v)`.
pub fn point_mass_rollout_value(seed: u64, kp: f64, kd: f64) -> Result<Value> {
    if !(kp.is_finite() && kd.is_finite()) {
        return Err(Error::Config("gains must be finite".into()));
    }
    let mut env = make_builtin("point_mass", &EnvParams::default())?;
    let mut obs = env.reset(seed);
    let mut path = vec![[obs[0], obs[1]]];
    let mut total = 0.0;
    loop {
        let a = (0..2).map(|i| (-kp * obs[i] - kd * obs[i + 2]).clamp(-1.0, 1.0)).collect();
        let step = env.step(&Action::Continuous(a))?;
        total += step.reward;
        let done = step.done();
        obs = step.next_state;
        path.push([obs[0], obs[1]]);
        if done {
            break;
        }
    }
    Ok(json!({ "path": path, "return": total }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn performance_gap(seed: u32, n_states: u32, n_actions: u32) -> std::result::Result<String, JsError> {
    to_js(performance_gap_value(seed.into(), n_states as usize, n_actions as usize))
}

#[wasm_bindgen]
pub fn chain_comparison(seed: u32, steps: u32, lambda: f64) -> std::result::Result<String, JsError> {
    to_js(chain_comparison_value(seed.into(), steps.into(), lambda))
}

#[wasm_bindgen]
pub fn point_mass_rollout(seed: u32, kp: f64, kd: f64) -> std::result::Result<String, JsError> {
    to_js(point_mass_rollout_value(seed.into(), kp, kd))
}
