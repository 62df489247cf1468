//! Random matrices, bases and traces for the property checks.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use seft::linalg::{pseudoinverse, Matrix, Vector, DEFAULT_PINV_TOL};
use seft::semantics::{SemanticBases, TransitionTrace};

/// Largest relative Penrose residual accepted.
pub const PENROSE_TOL: f64 = 1e-4;
/// Tolerance for exact-in-theory linear identities.
pub const LINEAR_TOL: f64 = 1e-9;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

pub fn rel(residual: &Matrix, scale: f64) -> f64 {
    residual.frobenius_norm() / scale.max(f64::MIN_POSITIVE)
}

pub fn penrose_residuals(a: &Matrix) -> [f64; 4] {
    let p = pseudoinverse(a, DEFAULT_PINV_TOL).unwrap();
    let ap = a.matmul(&p).unwrap();
    let pa = p.matmul(a).unwrap();
    [
        rel(&ap.matmul(a).unwrap().sub(a).unwrap(), a.frobenius_norm()),
        rel(&pa.matmul(&p).unwrap().sub(&p).unwrap(), p.frobenius_norm()),
        rel(&ap.transpose().sub(&ap).unwrap(), ap.frobenius_norm()),
        rel(&pa.transpose().sub(&pa).unwrap(), pa.frobenius_norm()),
    ]
}

pub fn random_bases(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> SemanticBases {
    SemanticBases::from_rows(
        random_matrix(rng, vocab, dim),
        random_matrix(rng, vocab, dim),
    )
    .unwrap()
}

pub fn random_trace(rng: &mut ChaCha8Rng, bases: &SemanticBases, m: usize) -> TransitionTrace {
    let medium = rng.random_range(0..bases.vocab());
    let label = rng.random_range(0..bases.vocab());
    let mut latents = vec![Vector::new(bases.input_base(medium).unwrap().to_vec()).unwrap()];
    for _ in 0..m {
        latents.push(
            Vector::new(
                (0..bases.dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap(),
        );
    }
    TransitionTrace {
        medium_token: medium,
        label,
        latents,
    }
}
