mod common;

use acpretrain::demo::record_demonstrations;
use acpretrain::mdp::{SimRng, TabularEnv};
use acpretrain::oracle::{discounted_pair_weights, optimal_policy, random_mdp, random_policy, solve_policy, verify_theorem1};
use acpretrain::pretrain::{
    advantage_objective, g_pi_star, g_q_star, sampled_advantage_objective, weighted_advantage_objective, HingeMode,
    PretrainConfig,
};
use acpretrain::value::DiscreteModel;
use rand::SeedableRng;

/// With exact `Q^pi` in the critic and the expert's exact discounted pair
/// weights, the objective is `eta(pi*) - eta(pi)`.
#[test]
fn objective_is_the_performance_gap_on_tabular_mdps() {
    let mut rng = SimRng::seed_from_u64(11);
    for _ in 0..20 {
        let mdp = random_mdp(5, 3, 0.9, &mut rng).unwrap();
        let pi_star = random_policy(5, 3, &mut rng);
        let pi = random_policy(5, 3, &mut rng);
        let sol = solve_policy(&mdp, &pi).unwrap();
        let model = common::tabular_model(&pi, &sol.q);
        let obs = common::one_hot_states(&mdp);
        let actions = common::all_actions(&mdp);
        let weights = discounted_pair_weights(&mdp, &pi_star).unwrap();
        let j = weighted_advantage_objective(&common::weighted_pairs(&obs, &actions, &weights), &model).unwrap();
        let gap = verify_theorem1(&mdp, &pi_star, &pi).unwrap().lhs;
        assert!((j.value - gap).abs() <= 1e-8, "J {} vs gap {gap}", j.value);
    }
}

#[test]
fn objective_vanishes_when_learner_is_the_expert() {
    let mut rng = SimRng::seed_from_u64(12);
    let mdp = random_mdp(4, 2, 0.9, &mut rng).unwrap();
    let pi = random_policy(4, 2, &mut rng);
    let model = common::tabular_model(&pi, &solve_policy(&mdp, &pi).unwrap().q);
    let weights = discounted_pair_weights(&mdp, &pi).unwrap();
    let (obs, actions) = (common::one_hot_states(&mdp), common::all_actions(&mdp));
    let j = weighted_advantage_objective(&common::weighted_pairs(&obs, &actions, &weights), &model).unwrap();
    assert!(j.value.abs() <= 1e-8);
}

/// Recorded demonstrations give a Monte-Carlo estimate of the same gap.
#[test]
fn sampled_demonstrations_estimate_the_gap() {
    let mut rng = SimRng::seed_from_u64(13);
    let mdp = random_mdp(4, 3, 0.9, &mut rng).unwrap();
    let pi_star = optimal_policy(&mdp);
    let pi = random_policy(4, 3, &mut rng);
    let sol = solve_policy(&mdp, &pi).unwrap();
    let model = common::tabular_model(&pi, &sol.q);
    let mut env = TabularEnv::new("random", mdp.clone(), 300);
    let demos = record_demonstrations(&pi_star, &mut env, 400, 99).unwrap();

    let per_traj: Vec<f64> = demos
        .trajectories
        .iter()
        .map(|traj| {
            let one = acpretrain::demo::Demonstration { meta: demos.meta.clone(), trajectories: vec![traj.clone()] };
            advantage_objective(&one, &model, mdp.gamma()).unwrap().value
        })
        .collect();
    let n = per_traj.len() as f64;
    let mean = per_traj.iter().sum::<f64>() / n;
    let se = (per_traj.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let full = advantage_objective(&demos, &model, mdp.gamma()).unwrap().value;
    assert!((full - mean).abs() < 1e-9, "objective is the mean over trajectories");
    let gap = verify_theorem1(&mdp, &pi_star, &pi).unwrap().lhs;
    // The 300-step truncation changes the target by at most 0.9^300 * max|A| / 0.1.
    assert!((mean - gap).abs() <= 3.0 * se + 1e-9, "mean {mean} vs gap {gap} (se {se})");

    let mut batch_rng = SimRng::seed_from_u64(1);
    let draws: Vec<f64> = (0..400)
        .map(|_| sampled_advantage_objective(&demos, &model, mdp.gamma(), 64, &mut batch_rng).unwrap().value)
        .collect();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let s = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() as f64 - 1.0) / draws.len() as f64).sqrt();
    assert!((m - full).abs() <= 4.0 * s, "minibatch mean {m} vs full {full} (se {s})");
}

/// A small step along `g_pi*` from exact critic values does not lower `eta`.
#[test]
fn policy_step_along_g_pi_star_improves_eta() {
    let mut rng = SimRng::seed_from_u64(14);
    for _ in 0..10 {
        let mdp = random_mdp(4, 3, 0.9, &mut rng).unwrap();
        let pi_star = optimal_policy(&mdp);
        let pi = random_policy(4, 3, &mut rng);
        let sol = solve_policy(&mdp, &pi).unwrap();
        let model = common::tabular_model(&pi, &sol.q);
        let (obs, actions) = (common::one_hot_states(&mdp), common::all_actions(&mdp));
        let weights = discounted_pair_weights(&mdp, &pi_star).unwrap();
        let j = weighted_advantage_objective(&common::weighted_pairs(&obs, &actions, &weights), &model).unwrap();
        let step = g_pi_star(&j);
        let mut params = model.params();
        for (p, g) in params.iter_mut().zip(&step) {
            *p += 1e-4 * g;
        }
        let mut moved = model.clone();
        moved.set_params(&params).unwrap();
        let table = acpretrain::algo::policy_table(&moved, 4).unwrap();
        let after = solve_policy(&mdp, &table).unwrap().eta;
        assert!(after >= sol.eta - 1e-12, "eta fell from {} to {after}", sol.eta);
    }
}

#[test]
fn critic_hinge_follows_the_sign_of_j() {
    let mut rng = SimRng::seed_from_u64(15);
    let mdp = random_mdp(3, 2, 0.9, &mut rng).unwrap();
    let pi_star = optimal_policy(&mdp);
    let (obs, actions) = (common::one_hot_states(&mdp), common::all_actions(&mdp));
    let weights = discounted_pair_weights(&mdp, &pi_star).unwrap();
    let penalty = PretrainConfig::default();
    let literal = PretrainConfig { hinge_mode: HingeMode::Literal, ..PretrainConfig::default() };
    for flip in [1.0, -1.0] {
        let pi = random_policy(3, 2, &mut rng);
        let q: Vec<Vec<f64>> = solve_policy(&mdp, &pi).unwrap().q.iter().map(|r| r.iter().map(|x| flip * x).collect()).collect();
        let model = common::tabular_model(&pi, &q);
        let j = weighted_advantage_objective(&common::weighted_pairs(&obs, &actions, &weights), &model).unwrap();
        let (p, l) = (g_q_star(&j, &penalty), g_q_star(&j, &literal));
        let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
        assert!(zero(&p) || zero(&l));
        assert_eq!(zero(&p), j.value >= 0.0);
    }
}
