//! Literal slot-by-slot simulation of the budgeted scheduler, plus the
//! constructed eof distributions it is checked on.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seft::budget::{Assignment, Phase};

pub struct BruteForce {
    pub assignments: Vec<Assignment>,
    pub unfilled: Vec<usize>,
    pub saving: f64,
}

/// Each slot scans the whole loader order for the first untrained batch
/// that may train at its boundary; leftovers go to the last slot's boundary.
pub fn brute_force(eofs: &[usize], slots: &[usize], m: usize) -> BruteForce {
    let mut used = vec![false; eofs.len()];
    let mut assignments = Vec::new();
    let mut unfilled = vec![0; m];
    for &b in slots {
        let mut hit = None;
        for (id, &e) in eofs.iter().enumerate() {
            if !used[id] && e <= b {
                hit = Some(id);
                break;
            }
        }
        match hit {
            Some(id) => {
                used[id] = true;
                assignments.push(Assignment {
                    batch_id: id,
                    natural_eof: eofs[id],
                    boundary: b,
                    phase: Phase::Slot,
                });
            }
            None => unfilled[b] += 1,
        }
    }
    let last = *slots.last().unwrap();
    for id in 0..eofs.len() {
        if !used[id] {
            assignments.push(Assignment {
                batch_id: id,
                natural_eof: eofs[id],
                boundary: last,
                phase: Phase::Forced,
            });
        }
    }
    let saving = assignments
        .iter()
        .map(|a| a.boundary as f64 / m as f64)
        .sum::<f64>()
        / eofs.len() as f64;
    BruteForce {
        assignments,
        unfilled,
        saving,
    }
}

pub fn distributions(m: usize, n: usize, seed: u64) -> Vec<(&'static str, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        ("all_zero", vec![0; n]),
        ("all_last", vec![m - 1; n]),
        ("uniform", (0..n).map(|_| rng.random_range(0..m)).collect()),
        (
            "shallow",
            (0..n)
                .map(|_| rng.random_range(0..m).min(rng.random_range(0..m)))
                .collect(),
        ),
        (
            "deep",
            (0..n)
                .map(|_| rng.random_range(0..m).max(rng.random_range(0..m)))
                .collect(),
        ),
        ("ascending", (0..n).map(|i| i * m / n).collect()),
        ("descending", (0..n).map(|i| (n - 1 - i) * m / n).collect()),
    ]
}
