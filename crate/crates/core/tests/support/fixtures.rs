//! Small models, batches and numeric oracles shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seft::model::{
    loss_and_gradients, Example, FreezeDecision, LossKind, ModelConfig, ModelParams, Objective,
};
use seft::semantics::SemanticBases;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Allowed relative disagreement between analytic and numeric gradients.
pub const FD_REL_TOL: f64 = 1e-3;
/// Magnitude below which the relative comparison switches to absolute.
pub const FD_FLOOR: f64 = 1e-6;

pub fn config(layers: usize, dim: usize, heads: usize, vocab: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        layers,
        dim,
        heads,
        vocab,
        context_len: 8,
        seed,
    }
}

pub fn random_batch(vocab: usize, n: usize, len: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Example {
            tokens: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            label: rng.random_range(0..vocab),
        })
        .collect()
}

pub fn bases_of(params: &ModelParams) -> SemanticBases {
    SemanticBases::build(&params.embedding_matrix(), &params.head_matrix()).unwrap()
}

pub const LOSSES: [LossKind; 3] = [
    LossKind::StandardCe,
    LossKind::SemanticCe,
    LossKind::SemanticCos,
];

pub fn fd_agrees(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_REL_TOL * analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Checks every trainable entry against central differences; returns
/// (entries checked, failures as "name[i]: analytic vs numeric").
pub fn finite_difference_check(
    params: &ModelParams,
    batch: &[Example],
    loss: LossKind,
    bases: &SemanticBases,
) -> (usize, Vec<String>) {
    let objective = Objective::new(loss, Some(bases)).unwrap();
    let freeze = FreezeDecision::full();
    let analytic = loss_and_gradients(params, batch, objective, freeze)
        .unwrap()
        .gradients;
    let mut work = params.clone();
    let mut checked = 0;
    let mut failures = Vec::new();
    for id in params.ids() {
        let grad = analytic.get(id);
        for i in 0..params.tensor(id).len() {
            let orig = work.tensor(id)[i];
            work.tensor_mut(id)[i] = orig + FD_STEP;
            let up = loss_and_gradients(&work, batch, objective, freeze)
                .unwrap()
                .loss;
            work.tensor_mut(id)[i] = orig - FD_STEP;
            let down = loss_and_gradients(&work, batch, objective, freeze)
                .unwrap()
                .loss;
            work.tensor_mut(id)[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            // untracked tensors must not influence the loss at all
            let a = grad.map_or(0.0, |g| g[i]);
            checked += 1;
            if !fd_agrees(a, numeric) {
                failures.push(format!("{}[{i}]: {a:e} vs {numeric:e}", id.name()));
            }
        }
    }
    (checked, failures)
}
