mod common;

use common::*;
use proptest::prelude::*;
use sorl_core::linalg::{frobenius_sq, Spectrum};
use sorl_core::spectral::{
    embedding, lowrank_loss, lowrank_loss_matrix, minimize_lowrank, minimize_lowrank_matrix,
    simclr_effective_matrix, topk_decompose, topk_symmetric, OptimizerConfig, SpectralEmbedding,
};
use sorl_core::toy::{self, CylinderRows, ToyParams, ToyRegime};
use sorl_core::{AdjacencyBundle, DMatrix, DVector};

fn toy_labeled() -> AdjacencyBundle {
    toy::toy_bundle(&ToyParams::new(0.95, 0.03, 0.02), ToyRegime::Labeled).unwrap()
}

/// Independent full eigensolve (Jacobi rotations) used as an oracle.
fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..200 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                m = rot.transpose() * &m * &rot;
                v = &v * &rot;
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let vals = idx.iter().map(|&i| m[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    (vals, vecs)
}

#[test]
fn toy_labeled_top_three() {
    let b = toy_labeled();
    let dec = topk_decompose(&b, 3).unwrap();
    let r: f64 = 0.03 / 0.95;
    assert!((dec.values[0] - 1.0).abs() < 1e-12);
    assert!((dec.values[1] - 1.0).abs() < 1e-12);
    // the first-order closed form 1 − (16/3) r is accurate to O(r²)
    let lam3 = dec.values[2];
    let closed = 1.0 - 16.0 / 3.0 * r;
    assert!((closed - 0.83158).abs() < 1e-5);
    assert!((lam3 - closed).abs() < 25.0 * r * r, "λ₃ = {lam3}");
}

#[test]
fn toy_third_eigenvalue_error_is_second_order() {
    // halving τ_c/τ₁ (with τ_s/τ_c fixed) cuts |λ₃ − λ̂₃| by about four
    let dev = |r: f64| {
        let ratio = 2.0 / 3.0;
        let t1 = 1.0 / (1.0 + r + ratio * r);
        let p = ToyParams::new(1.0 - r * t1 - ratio * r * t1, r * t1, ratio * r * t1);
        let b = toy::toy_bundle(&p, ToyRegime::Labeled).unwrap();
        let lam3 = Spectrum::of(b.a_norm()).values[2];
        (lam3 - (1.0 - 16.0 / 3.0 * r)).abs()
    };
    let (d1, d2, d3) = (dev(0.02), dev(0.01), dev(0.005));
    for ratio in [d1 / d2, d2 / d3] {
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }
    // slope of λ₃ in r at 0 is −16/3
    let slope = (dev(1e-4) - dev(2e-4)) / 1e-4;
    assert!(slope.abs() < 1e-2, "residual slope {slope}");
}

#[test]
fn identity_normalized_adjacency_is_gapless() {
    let n = 5;
    let world = sorl_core::AugmentationWorld::new(
        DMatrix::identity(n, n),
        DVector::from_element(n, 1.0 / n as f64),
        vec![0; n],
        Default::default(),
    )
    .unwrap();
    let b = AdjacencyBundle::from_world(&world, 1.0, 0.0).unwrap();
    let spec = Spectrum::of(b.a_norm());
    assert!(spec.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    for k in 1..n {
        assert!(topk_decompose(&b, k).is_err());
    }
}

#[test]
fn topk_matches_independent_full_eigensolve() {
    let mut r = rng(5);
    let a = random_symmetric(&mut r, 12);
    let dec = topk_symmetric(&a, 4).unwrap();
    let (vals, vecs) = jacobi_eigen(&a);
    for j in 0..4 {
        assert!((dec.values[j] - vals[j]).abs() < 1e-10);
        let dot = dec.vectors.column(j).dot(&vecs.column(j));
        assert!((dot.abs() - 1.0).abs() < 1e-9);
    }
    for j in 0..8 {
        assert!((dec.null_values[j] - vals[j + 4]).abs() < 1e-10);
    }
}

#[test]
fn toy_unlabeled_rows_follow_eigenvector_pattern() {
    let p = ToyParams::new(0.95, 0.03, 0.02).with_cylinders(CylinderRows::Stochastic);
    let b = toy::toy_bundle(&p, ToyRegime::Unlabeled).unwrap();
    let e = SpectralEmbedding::compute(&b, 3).unwrap();
    let f = e.factor(b.degrees());
    #[rustfmt::skip]
    let pattern = DMatrix::from_column_slice(6, 3, &[
        0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
        1.0, 1.0, 1.0, 1.0, 0.0, 0.0,
        1.0, -1.0, 1.0, -1.0, 0.0, 0.0,
    ]);
    let bound = 0.03 * 0.03 / (0.95 * (0.03 - 0.02));
    let d = sorl_core::linalg::sin_theta_distance(&f, &pattern);
    assert!(d <= 10.0 * bound, "sin distance {d}");
    // cylinder rows coincide, cube/sphere rows differ by color in the third coordinate
    assert!((e.z.row(4) - e.z.row(5)).norm() < 1e-12);
    assert!(e.z[(0, 2)] * e.z[(1, 2)] < 0.0);
}

#[test]
fn factor_reproduces_truncation_and_loss_is_tail_energy() {
    let mut r = rng(17);
    for _ in 0..10 {
        let world = random_world(&mut r, 7, 9, 3, 1);
        let b = AdjacencyBundle::from_world(&world, 1.0, 0.5).unwrap();
        let spec = Spectrum::of(b.a_norm());
        let Some(k) = (1..8).find(|&k| spec.values[k - 1] - spec.values[k] > 1e-6) else { continue };
        let e = SpectralEmbedding::compute(&b, k).unwrap();
        let f = e.factor(b.degrees());
        let trunc = e.decomposition.truncation();
        assert!(max_abs_diff(&(&f * f.transpose()), &trunc) < 1e-10);
        let z = embedding(&b, &e.decomposition).unwrap();
        assert_eq!(z, e.z);
        let tail: f64 = spec.values.iter().skip(k).map(|v| v * v).sum();
        assert!((lowrank_loss(&f, &b).unwrap() - tail).abs() < 1e-10);
        // embedding consistency invariants
        let v = &e.decomposition.vectors;
        assert!(max_abs_diff(&v.tr_mul(v), &DMatrix::identity(k, k)) < 1e-9);
        assert!(v.tr_mul(&e.decomposition.null_vectors).amax() < 1e-9);
        let av = b.a_norm() * v;
        let vl = DMatrix::from_fn(9, k, |i, j| v[(i, j)] * e.decomposition.values[j]);
        assert!(max_abs_diff(&av, &vl) < 1e-8);
    }
}

#[test]
fn full_rank_factorization_has_zero_loss() {
    let mut r = rng(2);
    let x = random_matrix(&mut r, 5, 5, 1.0);
    let a = &x * x.transpose();
    let spec = Spectrum::of(&a);
    let f = DMatrix::from_fn(5, 5, |i, j| spec.vectors[(i, j)] * spec.values[j].max(0.0).sqrt());
    assert!(lowrank_loss_matrix(&f, &a).unwrap() <= 1e-16 * frobenius_sq(&a).max(1.0) * 100.0);
}

#[test]
fn gradient_descent_recovers_toy_truncation() {
    let b = toy_labeled();
    let dec = topk_decompose(&b, 3).unwrap();
    let fit = minimize_lowrank(&b, 3, &OptimizerConfig::default()).unwrap();
    let prod = &fit.matrix * fit.matrix.transpose();
    assert!((prod - dec.truncation()).norm() <= 1e-4);
}

#[test]
fn different_seeds_give_same_product() {
    let mut r = rng(8);
    let world = random_world(&mut r, 10, 10, 3, 1);
    let b = AdjacencyBundle::from_world(&world, 1.0, 1.0).unwrap();
    let spec = Spectrum::of(b.a_norm());
    let k = (2..9).max_by(|&i, &j| {
        (spec.values[i - 1] - spec.values[i]).partial_cmp(&(spec.values[j - 1] - spec.values[j])).unwrap()
    }).unwrap();
    let f1 = minimize_lowrank(&b, k, &OptimizerConfig { seed: 1, ..Default::default() }).unwrap().matrix;
    let f2 = minimize_lowrank(&b, k, &OptimizerConfig { seed: 2, ..Default::default() }).unwrap().matrix;
    assert!(max_abs_diff(&f1, &f2) > 1e-3, "factors should differ by a rotation");
    assert!((&f1 * f1.transpose() - &f2 * f2.transpose()).norm() < 1e-6);
}

#[test]
fn exact_rank_k_reaches_zero_loss() {
    let mut r = rng(4);
    let u = random_matrix(&mut r, 8, 3, 1.0);
    let a = &u * u.transpose();
    let scale = Spectrum::of(&a).values[0];
    let a = a / scale;
    let fit = minimize_lowrank_matrix(&a, 3, &OptimizerConfig::default()).unwrap();
    assert!(fit.loss < 1e-10);
}

#[test]
fn simclr_uniform_degrees() {
    // regular graph: all degrees equal
    let n = 5;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.4 } else { 0.1 });
    let b = sorl_core::graph::compose_adjacency(a.clone(), vec![], 1.0, 0.0).unwrap();
    let m = simclr_effective_matrix(&b).unwrap();
    let correction = (DMatrix::from_element(n, n, 1.0) - DMatrix::identity(n, n)) / (n * (n - 1)) as f64;
    assert!(max_abs_diff(&m, &(a - correction)) < 1e-15);
}

#[test]
fn simclr_random_bundle_row_sums() {
    let mut r = rng(21);
    let world = random_world(&mut r, 6, 8, 2, 1);
    let b = AdjacencyBundle::from_world(&world, 2.0, 1.0).unwrap();
    let m = simclr_effective_matrix(&b).unwrap();
    assert!(max_abs_diff(&m, &m.transpose()) < 1e-15);
    let d = b.degrees();
    let tr = d.sum();
    let tr2: f64 = d.iter().map(|x| x * x).sum();
    for i in 0..8 {
        let corr_row: f64 = (0..8).filter(|&j| j != i).map(|j| d[i] * d[j]).sum::<f64>() / (tr * tr - tr2);
        assert!((m.row(i).sum() - (b.a().row(i).sum() - corr_row)).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rotation_invariance(seed in 0u64..5000, n in 3usize..10, k in 1usize..4) {
        let mut r = rng(seed);
        let a = random_symmetric(&mut r, n);
        let f = random_matrix(&mut r, n, k, 1.0);
        let q = random_matrix(&mut r, k, k, 1.0).qr().q();
        let l1 = lowrank_loss_matrix(&f, &a).unwrap();
        let l2 = lowrank_loss_matrix(&(&f * q), &a).unwrap();
        prop_assert!((l1 - l2).abs() < 1e-10);
    }

    #[test]
    fn eckart_young(seed in 0u64..5000) {
        let mut r = rng(seed);
        let world = random_world(&mut r, 6, 6, 2, 1);
        let b = AdjacencyBundle::from_world(&world, 1.0, 1.0).unwrap();
        let spec = Spectrum::of(b.a_norm());
        let k = (1..5).max_by(|&i, &j| {
            (spec.values[i - 1] - spec.values[i]).partial_cmp(&(spec.values[j - 1] - spec.values[j])).unwrap()
        }).unwrap();
        prop_assume!(spec.values[k - 1] - spec.values[k] > 1e-6);
        let opt = OptimizerConfig { seed, ..Default::default() };
        let fit = minimize_lowrank(&b, k, &opt).unwrap();
        let tail: f64 = spec.values.iter().skip(k).map(|v| v * v).sum();
        prop_assert!(lowrank_loss(&fit.matrix, &b).unwrap() - tail <= opt.tol);
    }
}
