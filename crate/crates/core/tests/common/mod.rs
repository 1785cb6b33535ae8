#![allow(dead_code)]

use acpretrain::mdp::{Action, TabularMdp};
use acpretrain::nn::{Activation, LayerSpec, Mlp};
use acpretrain::policy::{SoftmaxPolicy, TablePolicy};
use acpretrain::pretrain::WeightedPair;
use acpretrain::value::{QNetDiscrete, SplitActorCritic};

/// A one-layer linear map on one-hot inputs whose output for state `s` is `rows[s]`.
pub fn table_net(rows: &[Vec<f64>]) -> Mlp {
    let (n_in, n_out) = (rows.len(), rows[0].len());
    let mut params = vec![0.0; n_in * n_out + n_out];
    for (s, row) in rows.iter().enumerate() {
        for (o, v) in row.iter().enumerate() {
            params[o * n_in + s] = *v;
        }
    }
    Mlp::from_params(vec![LayerSpec::new(n_in, n_out, Activation::Identity)], params).unwrap()
}

/// Split actor-critic that represents `policy` and `q` exactly on one-hot states.
pub fn tabular_model(policy: &TablePolicy, q: &[Vec<f64>]) -> SplitActorCritic {
    let logits: Vec<Vec<f64>> = policy.probs.iter().map(|row| row.iter().map(|p| p.ln()).collect()).collect();
    SplitActorCritic::new(SoftmaxPolicy::new(table_net(&logits)), QNetDiscrete::new(table_net(q))).unwrap()
}

pub fn one_hot_states(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    (0..mdp.n_states()).map(|s| acpretrain::mdp::one_hot(s, mdp.n_states())).collect()
}

pub fn all_actions(mdp: &TabularMdp) -> Vec<Action> {
    (0..mdp.n_actions()).map(Action::Discrete).collect()
}

/// Every `(s, a)` pair with the given weights.
pub fn weighted_pairs<'a>(obs: &'a [Vec<f64>], actions: &'a [Action], weights: &[Vec<f64>]) -> Vec<WeightedPair<'a>> {
    let mut pairs = Vec::new();
    for (s, o) in obs.iter().enumerate() {
        for (a, act) in actions.iter().enumerate() {
            pairs.push(WeightedPair { obs: o, action: act, weight: weights[s][a] });
        }
    }
    pairs
}
