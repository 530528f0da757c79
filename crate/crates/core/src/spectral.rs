//! Top-k spectral decomposition of the normalized adjacency, the derived
//! embeddings, the low-rank objective and its gradient-descent minimizer.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyBundle;
use crate::linalg::{self, Spectrum};

/// Minimum absolute gap λ_k − λ_{k+1} for the top-k subspace to be well defined.
pub const EPS_GAP: f64 = 1e-9;
/// Retained eigenvalues above −EPS_NEG are clamped to zero; below it they are an error.
pub const EPS_NEG: f64 = 1e-12;

/// Gap between the k-th and (k+1)-th eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralGap {
    /// λ_k / λ_{k+1}; infinite when λ_{k+1} ≤ 0.
    pub ratio: f64,
    /// λ_k − λ_{k+1}.
    pub absolute: f64,
}

/// Top-k eigenpairs of a symmetric matrix together with the complement.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub k: usize,
    /// N×k, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Length k, descending.
    pub values: DVector<f64>,
    /// N×(N−k) orthonormal complement.
    pub null_vectors: DMatrix<f64>,
    pub null_values: DVector<f64>,
    pub gap: SpectralGap,
}

impl SpectralDecomposition {
    /// All N eigenvalues in descending order.
    pub fn all_values(&self) -> DVector<f64> {
        let mut v = self.values.iter().copied().collect::<Vec<_>>();
        v.extend(self.null_values.iter().copied());
        DVector::from_vec(v)
    }

    /// Rank-k truncation V_k Σ_k V_kᵀ.
    pub fn truncation(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.k, |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        linalg::symmetrize(&(scaled * self.vectors.transpose()))
    }

    /// Top-k projector V_k V_kᵀ.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.vectors * self.vectors.transpose()
    }
}

/// Decomposition plus the feature matrix Z = D^{-1/2} V_k √Σ_k.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub decomposition: SpectralDecomposition,
    pub z: DMatrix<f64>,
}

impl SpectralEmbedding {
    pub fn compute(bundle: &AdjacencyBundle, k: usize) -> Result<Self> {
        Self::from_parts(bundle.a_norm(), bundle.degrees(), k)
    }

    /// Same as [`compute`](Self::compute) from an explicit Ã and degree vector.
    pub fn from_parts(a_norm: &DMatrix<f64>, degrees: &DVector<f64>, k: usize) -> Result<Self> {
        let decomposition = topk_symmetric(a_norm, k)?;
        let z = embed_with_degrees(degrees, &decomposition)?;
        Ok(SpectralEmbedding { decomposition, z })
    }

    pub fn k(&self) -> usize {
        self.decomposition.k
    }

    /// F = √D · Z, the low-rank factor with F Fᵀ = Ã_k.
    pub fn factor(&self, degrees: &DVector<f64>) -> DMatrix<f64> {
        let s = degrees.map(f64::sqrt);
        DMatrix::from_fn(self.z.nrows(), self.z.ncols(), |i, j| s[i] * self.z[(i, j)])
    }
}

/// Top-k eigenpairs of the bundle's Ã.
pub fn topk_decompose(bundle: &AdjacencyBundle, k: usize) -> Result<SpectralDecomposition> {
    topk_symmetric(bundle.a_norm(), k)
}

/// Top-k eigenpairs of any symmetric matrix.
pub fn topk_symmetric(a: &DMatrix<f64>, k: usize) -> Result<SpectralDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!("matrix is {}x{}", n, a.ncols())));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ k < N, got k={k}, N={n}")));
    }
    let spec = Spectrum::of(a);
    decomposition_from_spectrum(&spec, k)
}

pub fn decomposition_from_spectrum(spec: &Spectrum, k: usize) -> Result<SpectralDecomposition> {
    let n = spec.len();
    let upper = spec.values[k - 1];
    let lower = spec.values[k];
    let absolute = upper - lower;
    if absolute < EPS_GAP {
        return Err(Error::DegenerateGap { k, upper, lower });
    }
    let ratio = if lower > 0.0 { upper / lower } else { f64::INFINITY };
    Ok(SpectralDecomposition {
        k,
        vectors: spec.vectors.columns(0, k).into_owned(),
        values: spec.values.rows(0, k).into_owned(),
        null_vectors: spec.vectors.columns(k, n - k).into_owned(),
        null_values: spec.values.rows(k, n - k).into_owned(),
        gap: SpectralGap { ratio, absolute },
    })
}

/// Z = D^{-1/2} V_k √Σ_k.
pub fn embedding(bundle: &AdjacencyBundle, dec: &SpectralDecomposition) -> Result<DMatrix<f64>> {
    embed_with_degrees(bundle.degrees(), dec)
}

fn embed_with_degrees(degrees: &DVector<f64>, dec: &SpectralDecomposition) -> Result<DMatrix<f64>> {
    let n = dec.vectors.nrows();
    if degrees.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "degree vector has length {}, expected {n}",
            degrees.len()
        )));
    }
    let mut roots = Vec::with_capacity(dec.k);
    for (j, &lam) in dec.values.iter().enumerate() {
        if lam < -EPS_NEG {
            return Err(Error::NegativeEigenvalue { index: j, value: lam });
        }
        roots.push(lam.max(0.0).sqrt());
    }
    Ok(DMatrix::from_fn(n, dec.k, |i, j| {
        dec.vectors[(i, j)] * roots[j] / degrees[i].sqrt()
    }))
}

/// ‖Ã − F Fᵀ‖_F².
pub fn lowrank_loss(f: &DMatrix<f64>, bundle: &AdjacencyBundle) -> Result<f64> {
    lowrank_loss_matrix(f, bundle.a_norm())
}

pub fn lowrank_loss_matrix(f: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if f.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "F has {} rows, matrix has {}",
            f.nrows(),
            a.nrows()
        )));
    }
    Ok(linalg::frobenius_sq(&(a - f * f.transpose())))
}

/// Gradient-descent settings shared by the low-rank and SORL minimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Step size; `None` selects the default for the objective.
    pub step: Option<f64>,
    pub max_iters: usize,
    /// Stop when the gradient Frobenius norm drops to this value.
    pub tol: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    /// Record a trace point every this many iterations (0 disables).
    pub trace_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step: None,
            max_iters: 50_000,
            tol: 1e-8,
            seed: 0,
            init_scale: 0.1,
            trace_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Result of a gradient-descent run.
#[derive(Debug, Clone)]
pub struct Fit {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub trace: Vec<TracePoint>,
}

pub(crate) fn gaussian_init(rows: usize, cols: usize, opt: &OptimizerConfig) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    DMatrix::from_fn(rows, cols, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g * opt.init_scale
    })
}

/// Plain gradient descent; `objective` returns (loss, gradient).
pub(crate) fn gradient_descent<F>(
    mut x: DMatrix<f64>,
    step: f64,
    opt: &OptimizerConfig,
    objective: F,
) -> Result<Fit>
where
    F: Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>),
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {step}")));
    }
    let mut trace = Vec::new();
    let mut iteration = 0;
    loop {
        let (loss, grad) = objective(&x);
        let grad_norm = grad.norm();
        let record = opt.trace_every > 0 && iteration % opt.trace_every == 0;
        let converged = grad_norm <= opt.tol;
        if record || converged || iteration == opt.max_iters {
            trace.push(TracePoint { iteration, loss, grad_norm });
        }
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonConvergence { iterations: iteration, loss, grad_norm });
        }
        if converged {
            return Ok(Fit { matrix: x, iterations: iteration, loss, grad_norm, trace });
        }
        if iteration == opt.max_iters {
            return Err(Error::NonConvergence { iterations: iteration, loss, grad_norm });
        }
        x -= grad * step;
        iteration += 1;
    }
}

/// Largest |eigenvalue| by power iteration on a symmetric matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = a * (a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - est).abs() <= 1e-12 * next {
            return next;
        }
        est = next;
    }
    est
}

/// Minimize ‖Ã − F Fᵀ‖_F² over N×k matrices F by gradient descent.
pub fn minimize_lowrank(bundle: &AdjacencyBundle, k: usize, opt: &OptimizerConfig) -> Result<Fit> {
    minimize_lowrank_matrix(bundle.a_norm(), k, opt)
}

pub fn minimize_lowrank_matrix(a: &DMatrix<f64>, k: usize, opt: &OptimizerConfig) -> Result<Fit> {
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 ≤ k ≤ N, got k={k}, N={n}")));
    }
    let step = match opt.step {
        Some(s) => s,
        None => {
            let l1 = spectral_radius(a);
            if l1 == 0.0 {
                return Err(Error::InvalidArgument("matrix is zero".into()));
            }
            0.1 / (l1 * l1)
        }
    };
    let init = gaussian_init(n, k, opt);
    gradient_descent(init, step, opt, |f| {
        let residual = a - f * f.transpose();
        let loss = linalg::frobenius_sq(&residual);
        let grad = &residual * f * -4.0;
        (loss, grad)
    })
}

/// SimCLR effective matrix A − (D 1 1ᵀ D − D²) / (Tr(D)² − Tr(D²)).
pub fn simclr_effective_matrix(bundle: &AdjacencyBundle) -> Result<DMatrix<f64>> {
    let d = bundle.degrees();
    let tr: f64 = d.sum();
    let tr_sq: f64 = d.iter().map(|x| x * x).sum();
    let norm = tr * tr - tr_sq;
    if norm <= 1e-12 * tr * tr || norm <= 0.0 {
        return Err(Error::DegenerateNormalizer(norm));
    }
    let a = bundle.a();
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        let corr = if i == j { 0.0 } else { d[i] * d[j] / norm };
        a[(i, j)] - corr
    }))
}
