#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sorl_core::{AugmentationWorld, DMatrix, DVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    let mut t = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.05..1.0));
    for i in 0..m {
        let s = t.row(i).sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
    let s = v.sum();
    v / s
}

/// Dense random world: M natural samples over `classes` classes (each
/// nonempty), N augmented points, the first `labeled` classes labeled.
pub fn random_world(rng: &mut ChaCha8Rng, m: usize, n: usize, classes: usize, labeled: usize) -> AugmentationWorld {
    assert!(classes <= m && labeled <= classes);
    let t = random_stochastic(rng, m, n);
    let p = random_distribution(rng, m);
    let mut class_of: Vec<usize> = (0..m).map(|i| if i < classes { i } else { rng.random_range(0..classes) }).collect();
    // shuffle so the guaranteed members are not always first
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        class_of.swap(i, j);
    }
    let mut lab = BTreeMap::new();
    for c in 0..labeled {
        let members: Vec<usize> = (0..m).filter(|&i| class_of[i] == c).collect();
        let mut pl = DVector::zeros(m);
        let w = random_distribution(rng, members.len());
        for (k, &i) in members.iter().enumerate() {
            pl[i] = w[k];
        }
        lab.insert(c, pl);
    }
    AugmentationWorld::new(t, p, class_of, lab).expect("valid random world")
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0) * scale)
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 1.0);
    (&a + a.transpose()) * 0.5
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Positive semidefinite BᵀB with unit row sums, where B is a random
/// doubly-stochastic matrix from Sinkhorn scaling.
pub fn random_regular(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    for _ in 0..10_000 {
        for i in 0..n {
            let s = b.row(i).sum();
            b.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let mut err: f64 = 0.0;
        for j in 0..n {
            let s: f64 = b.column(j).sum();
            err = err.max((s - 1.0).abs());
            b.column_mut(j).iter_mut().for_each(|v| *v /= s);
        }
        if err < 1e-15 {
            break;
        }
    }
    b.transpose() * b
}

/// Random class labels over `c` classes, each used at least once.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        l.swap(i, j);
    }
    l
}
