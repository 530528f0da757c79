//! The five-term SORL objective evaluated exactly on a finite world.
//!
//! Every expectation is contracted in closed form through the label vectors
//! 𝔩_i, the unlabeled adjacency Tᵀ diag(P) T and the augmented marginal
//! u = Tᵀ P. With G = f fᵀ and s = Σ_i 𝔩_i:
//!
//! ```text
//! L1 = Σ_i ‖fᵀ 𝔩_i‖²      L2 = Tr(fᵀ A_u f)
//! L3 = sᵀ (G∘G) s          L4 = sᵀ (G∘G) u        L5 = uᵀ (G∘G) u
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{AdjacencyBundle, AugmentationWorld, RowPolicy};
use crate::linalg;
use crate::spectral::{self, Fit, OptimizerConfig};

/// A free feature matrix: row x is f(x).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map has non-finite entries".into()));
        }
        Ok(FeatureMap { values })
    }

    /// Feature map with f(x) = F_x / √w_x, the inverse of [`scaled`](Self::scaled).
    pub fn from_factor(factor: &DMatrix<f64>, bundle: &AdjacencyBundle) -> Result<Self> {
        check_rows(factor, bundle)?;
        let w = bundle.degrees();
        Self::new(DMatrix::from_fn(factor.nrows(), factor.ncols(), |i, j| {
            factor[(i, j)] / w[i].sqrt()
        }))
    }

    /// F = diag(√w) f.
    pub fn scaled(&self, bundle: &AdjacencyBundle) -> DMatrix<f64> {
        let w = bundle.degrees();
        DMatrix::from_fn(self.values.nrows(), self.values.ncols(), |i, j| {
            self.values[(i, j)] * w[i].sqrt()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SorlTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
}

impl SorlTerms {
    pub fn combine(&self, eta_u: f64, eta_l: f64) -> f64 {
        -2.0 * eta_l * self.l1 - 2.0 * eta_u * self.l2
            + eta_l * eta_l * self.l3
            + 2.0 * eta_l * eta_u * self.l4
            + eta_u * eta_u * self.l5
    }
}

fn check_rows(m: &DMatrix<f64>, bundle: &AdjacencyBundle) -> Result<()> {
    if m.nrows() != bundle.n() {
        return Err(Error::DimensionMismatch(format!(
            "feature map has {} rows, graph has {} vertices",
            m.nrows(),
            bundle.n()
        )));
    }
    Ok(())
}

fn check_consistent(world: &AugmentationWorld, bundle: &AdjacencyBundle) -> Result<()> {
    if world.augmented_count() != bundle.n() {
        return Err(Error::DimensionMismatch(format!(
            "world has {} augmented points, graph has {} vertices",
            world.augmented_count(),
            bundle.n()
        )));
    }
    if world.labeled_classes().len() != bundle.label_vectors().len() {
        return Err(Error::DimensionMismatch(
            "bundle label vectors do not match the world's labeled classes".into(),
        ));
    }
    Ok(())
}

/// aᵀ (G∘G) b with G = f fᵀ, without forming G.
fn hadamard_form(f: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let g = f * f.transpose();
    let n = f.nrows();
    let mut acc = 0.0;
    for y in 0..n {
        let mut col = 0.0;
        for x in 0..n {
            let v = g[(x, y)];
            col += a[x] * v * v;
        }
        acc += col * b[y];
    }
    acc
}

fn label_sum(bundle: &AdjacencyBundle) -> DVector<f64> {
    let mut s = DVector::zeros(bundle.n());
    for l in bundle.label_vectors() {
        s += l;
    }
    s
}

pub fn sorl_terms(f: &FeatureMap, world: &AugmentationWorld, bundle: &AdjacencyBundle) -> Result<SorlTerms> {
    check_consistent(world, bundle)?;
    let fm = &f.values;
    check_rows(fm, bundle)?;
    let s = label_sum(bundle);
    let u = world.augmented_marginal();
    let l1 = bundle
        .label_vectors()
        .iter()
        .map(|l| fm.tr_mul(l).norm_squared())
        .sum();
    let l2 = (fm.transpose() * bundle.a_u() * fm).trace();
    Ok(SorlTerms {
        l1,
        l2,
        l3: hadamard_form(fm, &s, &s),
        l4: hadamard_form(fm, &s, &u),
        l5: hadamard_form(fm, &u, &u),
    })
}

pub fn sorl_loss(f: &FeatureMap, world: &AugmentationWorld, bundle: &AdjacencyBundle) -> Result<f64> {
    Ok(sorl_terms(f, world, bundle)?.combine(bundle.eta_u(), bundle.eta_l()))
}

/// q = η_l Σ 𝔩_i + η_u Tᵀ P, the weight vector of the quartic part.
fn quartic_weights(world: &AugmentationWorld, bundle: &AdjacencyBundle) -> DVector<f64> {
    label_sum(bundle) * bundle.eta_l() + world.augmented_marginal() * bundle.eta_u()
}

fn loss_and_gradient(
    fm: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DVector<f64>,
) -> (f64, DMatrix<f64>) {
    let n = fm.nrows();
    let af = a * fm;
    let linear = fm.component_mul(&af).sum();
    let qf = DMatrix::from_fn(n, fm.ncols(), |i, j| q[i] * fm[(i, j)]);
    // (f fᵀ) (Q f) = f (fᵀ Q f)
    let gqf = fm * (fm.transpose() * &qf);
    let quartic = qf.component_mul(&gqf).sum();
    let loss = -2.0 * linear + quartic;
    let qgqf = DMatrix::from_fn(n, fm.ncols(), |i, j| q[i] * gqf[(i, j)]);
    let grad = af * -4.0 + qgqf * 4.0;
    (loss, grad)
}

/// Gradient of the SORL loss with respect to f.
pub fn sorl_gradient(f: &FeatureMap, world: &AugmentationWorld, bundle: &AdjacencyBundle) -> Result<DMatrix<f64>> {
    check_consistent(world, bundle)?;
    check_rows(&f.values, bundle)?;
    let q = quartic_weights(world, bundle);
    Ok(loss_and_gradient(&f.values, bundle.a(), &q).1)
}

/// The f-independent offset in L_mf(diag(√w) f) − L_SORL(f), computed two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetConstant {
    /// ‖Ã‖_F².
    pub normalized_frobenius: f64,
    /// Σ_{x,x'} w_{xx'}² / (w_x w_{x'}).
    pub weighted_sum: f64,
}

pub fn offset_constant(bundle: &AdjacencyBundle) -> OffsetConstant {
    let a = bundle.a();
    let w = bundle.degrees();
    let n = bundle.n();
    let mut weighted_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            weighted_sum += a[(i, j)] * a[(i, j)] / (w[i] * w[j]);
        }
    }
    OffsetConstant {
        normalized_frobenius: linalg::frobenius_sq(bundle.a_norm()),
        weighted_sum,
    }
}

/// L_mf(diag(√w) f) − L_SORL(f).
pub fn offset(f: &FeatureMap, world: &AugmentationWorld, bundle: &AdjacencyBundle) -> Result<f64> {
    let lmf = spectral::lowrank_loss(&f.scaled(bundle), bundle)?;
    Ok(lmf - sorl_loss(f, world, bundle)?)
}

/// Minimize the SORL loss over a free N×k feature matrix.
///
/// The minimizer coincides with the rank-k spectral factor only when every row
/// of `T` is a distribution, so worlds with relaxed rows are rejected.
pub fn train_sorl(
    world: &AugmentationWorld,
    bundle: &AdjacencyBundle,
    k: usize,
    opt: &OptimizerConfig,
) -> Result<(FeatureMap, Fit)> {
    check_consistent(world, bundle)?;
    if world.row_policy() == RowPolicy::Relaxed {
        return Err(Error::InvalidWorld(
            "SORL training needs row-stochastic augmentation rows".into(),
        ));
    }
    let n = bundle.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ k ≤ N, got k={k}, N={n}")));
    }
    let q = quartic_weights(world, bundle);
    let step = match opt.step {
        Some(s) => s,
        None => {
            let l1 = spectral::spectral_radius(bundle.a_norm());
            let w_max = q.max();
            0.1 / (l1 * l1 * w_max)
        }
    };
    let a = bundle.a();
    // start in F-space scale so the initial products are comparable
    let init = spectral::gaussian_init(n, k, opt);
    let init = DMatrix::from_fn(n, k, |i, j| init[(i, j)] / q[i].sqrt());
    let fit = spectral::gradient_descent(init, step, opt, |fm| loss_and_gradient(fm, a, &q))?;
    Ok((FeatureMap::new(fit.matrix.clone())?, fit))
}
