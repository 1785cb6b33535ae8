use acpretrain::demo::{DemoMeta, DemoStep, Demonstration};
use acpretrain::mdp::{Action, ActionSpace, SimRng};
use acpretrain::nn::{layer_stack, Activation, Mlp};
use acpretrain::oracle::{random_mdp, random_policy, verify_theorem1};
use acpretrain::policy::softmax;
use acpretrain::pretrain::{combined_gradients, g_q_star, weighted_advantage_objective, HingeMode, PretrainConfig, WeightedPair};
use acpretrain::value::{soft_update, SharedActorCritic};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random_shared(obs_dim: usize, n_actions: usize, scale: f64, rng: &mut SimRng) -> SharedActorCritic {
    let layers = layer_stack(&[obs_dim, 4, 2 * n_actions], Activation::Tanh, Activation::Identity).unwrap();
    SharedActorCritic::new(Mlp::init(layers, scale, rng).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    /// Penalty mode is silent exactly when the constraint holds, and the two
    /// hinge readings never fire together.
    #[test]
    fn hinge_modes_partition_the_sign_of_j(seed in any::<u64>(), n_pairs in 1usize..12, n_actions in 2usize..5, log_scale in -3.0f64..1.0) {
        let mut rng = SimRng::seed_from_u64(seed);
        let model = random_shared(3, n_actions, 10f64.powf(log_scale), &mut rng);
        let obs: Vec<Vec<f64>> = (0..n_pairs).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<Action> = (0..n_pairs).map(|_| Action::Discrete(rng.random_range(0..n_actions))).collect();
        let pairs: Vec<WeightedPair<'_>> = (0..n_pairs)
            .map(|i| WeightedPair { obs: &obs[i], action: &actions[i], weight: 0.99f64.powi(i as i32) })
            .collect();
        let j = weighted_advantage_objective(&pairs, &model).unwrap();
        let penalty = g_q_star(&j, &PretrainConfig::default());
        let literal = g_q_star(&j, &PretrainConfig { hinge_mode: HingeMode::Literal, ..PretrainConfig::default() });
        let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
        if j.value >= 0.0 {
            prop_assert!(zero(&penalty));
        }
        prop_assert!(zero(&penalty) || zero(&literal));
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm(&penalty) <= 10.0 + 1e-9 && norm(&literal) <= 10.0 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn performance_difference_identity(seed in any::<u64>(), n_s in 1usize..=6, n_a in 1usize..=4, gamma in 0.1f64..0.98) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mdp = random_mdp(n_s, n_a, gamma, &mut rng).unwrap();
        let check = verify_theorem1(&mdp, &random_policy(n_s, n_a, &mut rng), &random_policy(n_s, n_a, &mut rng)).unwrap();
        prop_assert!(check.gap <= 1e-8 * (1.0 + check.lhs.abs()), "{check:?}");
    }

    #[test]
    fn pretraining_stops_exactly_after_the_budget(budget in 0u64..50, seed in any::<u64>()) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut v = || (0..6).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (gq, gp, sq, sp) = (v(), v(), v(), v());
        let cfg = PretrainConfig { pretrain_steps: budget, ..PretrainConfig::default() };
        let (q, p) = combined_gradients(&gq, &gp, &sq, &sp, &cfg, budget + 1).unwrap();
        prop_assert_eq!((q, p), (gq.clone(), gp.clone()));
        if budget > 0 {
            let (q, p) = combined_gradients(&gq, &gp, &sq, &sp, &cfg, budget).unwrap();
            for i in 0..6 {
                prop_assert_eq!(q[i], gq[i] + sq[i]);
                prop_assert_eq!(p[i], gp[i] + sp[i]);
            }
        }
        let off = PretrainConfig { lambda_q: 0.0, lambda_pi: 0.0, ..cfg };
        let (q, _) = combined_gradients(&gq, &gp, &sq, &sp, &off, 1).unwrap();
        prop_assert_eq!(q, gq);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-300.0f64..300.0, 1..8)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_update_is_a_convex_blend(tau in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = SimRng::seed_from_u64(seed);
        let layers = layer_stack(&[2, 3, 1], Activation::Tanh, Activation::Identity).unwrap();
        let live = Mlp::init(layers.clone(), 1.0, &mut rng).unwrap();
        let mut target = Mlp::init(layers, 1.0, &mut rng).unwrap();
        let before = target.params().to_vec();
        soft_update(&mut target, &live, tau).unwrap();
        for ((t, b), l) in target.params().iter().zip(&before).zip(live.params()) {
            prop_assert!((t - (tau * l + (1.0 - tau) * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn demonstrations_round_trip_through_jsonl(seed in any::<u64>(), n_traj in 0usize..4) {
        let mut rng = SimRng::seed_from_u64(seed);
        let trajectories: Vec<Vec<DemoStep>> = (0..n_traj)
            .map(|_| {
                (0..rng.random_range(1..5))
                    .map(|_| DemoStep {
                        obs: (0..4).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect(),
                        action: Action::Continuous(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
                    })
                    .collect()
            })
            .collect();
        let demo = Demonstration {
            meta: DemoMeta {
                env: "point_mass".into(),
                policy: "probe".into(),
                seed,
                obs_dim: 4,
                action_space: ActionSpace::Continuous { low: vec![-1.0; 2], high: vec![1.0; 2] },
            },
            trajectories,
        };
        let mut buf = Vec::new();
        demo.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(Demonstration::read_jsonl(buf.as_slice()).unwrap(), demo);
    }
}
