#![allow(dead_code)]

use els_core::linalg::{qf, trace_product, DenseMatrix};
use els_core::minimax::{MinimaxProblem, Piece};
use els_core::problem::{ElsProblem, LinearConstraint};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn random_stiefel(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
    qf(&gaussian(rng, n, p))
}

/// `k` random constraints of mixed type, all satisfied by `anchor`.
pub fn constraints_around(rng: &mut ChaCha8Rng, anchor: &DenseMatrix, k: usize) -> Vec<LinearConstraint> {
    let (n, p) = anchor.shape();
    (0..k)
        .map(|_| {
            let a = gaussian(rng, p, n);
            let v = trace_product(&a, anchor);
            let s1 = rng.random_range(0.0..0.5);
            let s2 = rng.random_range(0.0..0.5);
            match rng.random_range(0..4) {
                0 => LinearConstraint::equality(a, v),
                1 => LinearConstraint::upper_bound(a, v + s1),
                2 => LinearConstraint::lower_bound(a, v - s1),
                _ => LinearConstraint::new(a, v - s1, v + s2),
            }
        })
        .collect()
}

/// Random instance with `p + k <= n`, feasible by construction.
pub fn feasible_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> ElsProblem {
    let anchor = random_stiefel(rng, n, p);
    let cs = constraints_around(rng, &anchor, k);
    ElsProblem::new(n, p, gaussian(rng, p, n), cs).unwrap()
}

pub fn random_minimax(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize, m: usize) -> MinimaxProblem {
    let anchor = random_stiefel(rng, n, p);
    let cs = constraints_around(rng, &anchor, k);
    let base = ElsProblem::new(n, p, DenseMatrix::zeros(p, n), cs).unwrap();
    let pieces = (0..m)
        .map(|_| Piece {
            a: gaussian(rng, p, n),
            c: StandardNormal.sample(rng),
        })
        .collect();
    MinimaxProblem::new(base, pieces).unwrap()
}
