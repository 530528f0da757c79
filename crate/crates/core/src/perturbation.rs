//! How a rank-one label term δ 𝔩 𝔩ᵀ added to a regular base graph changes the
//! K-means measure of the spectral embedding.
//!
//! The base A(0) is rescaled to unit row sums, so D(0) = I and
//! [D(δ)^{-1/2}]' = −½ D_l at δ = 0. Everything below works in the
//! eigenbasis of Ã(0): with Υ̂ = Vᵀ Υ V, l̂ = Vᵀ 𝔩 and D̂ = Vᵀ D_l V the exact
//! derivative of 𝓜_kms is a finite sum over eigen-index pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::{self, Partition, EPS_INTER};
use crate::error::{Assumption, Error, Result};
use crate::exec::Execution;
use crate::graph::{AdjacencyBundle, EPS_DEGREE};
use crate::linalg::{self, Spectrum};
use crate::spectral::{decomposition_from_spectrum, SpectralDecomposition, SpectralEmbedding, EPS_GAP};

/// Relative degree spread tolerated in the base graph before rescaling.
pub const REGULARITY_TOL: f64 = 1e-9;

/// Thresholds for the class-wise bound assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssumptionConfig {
    /// Minimum λ_k / λ_{k+1}.
    pub min_gap_ratio: f64,
    /// Maximum ‖(I − V_k V_kᵀ) 𝔩‖ / ‖𝔩‖.
    pub span_tol: f64,
    /// Maximum relative spread of 𝔩 inside any class.
    pub constancy_tol: f64,
    /// Slack allowed in the bound comparison.
    pub bound_slack: f64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        AssumptionConfig {
            min_gap_ratio: 10.0,
            span_tol: 1e-6,
            constancy_tol: 1e-8,
            bound_slack: 1e-8,
        }
    }
}

/// Base graph, label direction and partition, with the δ = 0 quantities.
#[derive(Debug, Clone)]
pub struct PerturbationSetup {
    base: DMatrix<f64>,
    label: DVector<f64>,
    k: usize,
    partition: Partition,
    scale: f64,
    spectrum: Spectrum,
    embedding: SpectralEmbedding,
    intra: f64,
    inter: f64,
    upsilon: DMatrix<f64>,
}

impl PerturbationSetup {
    /// `base` is A(0) before rescaling; it must have constant row sums.
    pub fn new(base: &DMatrix<f64>, label: DVector<f64>, k: usize, partition: Partition) -> Result<Self> {
        let n = base.nrows();
        if base.ncols() != n || label.len() != n || partition.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "base {}x{}, label {}, partition {}",
                n,
                base.ncols(),
                label.len(),
                partition.n()
            )));
        }
        if label.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidArgument("label vector must be finite and nonnegative".into()));
        }
        let rows: Vec<f64> = (0..n).map(|i| base.row(i).sum()).collect();
        let mean = rows.iter().sum::<f64>() / n as f64;
        if mean <= EPS_DEGREE {
            return Err(Error::ZeroDegree { vertices: (0..n).collect() });
        }
        let lo = rows.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = (hi - lo) / mean;
        if spread > REGULARITY_TOL {
            return Err(Error::IrregularBase { spread });
        }
        let scale = 1.0 / mean;
        let base = linalg::symmetrize(&(base * scale));
        let (a_norm, degrees) = normalize(&base, &label, 0.0)?;
        let spectrum = Spectrum::of(&a_norm);
        if k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!("need 1 ≤ k < N, got k={k}, N={n}")));
        }
        let decomposition = decomposition_from_spectrum(&spectrum, k)?;
        let embedding = embed(decomposition, &degrees)?;
        let scatter = clustering::intra_inter(&partition, &embedding.z)?;
        if scatter.inter <= EPS_INTER {
            return Err(Error::DegenerateInter(scatter.inter));
        }
        let eta2 = scatter.intra / scatter.inter;
        let h = partition.membership_matrix();
        let upsilon = linalg::symmetrize(
            &(h * (1.0 + eta2) - DMatrix::identity(n, n) - DMatrix::from_element(n, n, eta2 / n as f64)),
        );
        Ok(PerturbationSetup {
            base,
            label,
            k,
            partition,
            scale,
            spectrum,
            embedding,
            intra: scatter.intra,
            inter: scatter.inter,
            upsilon,
        })
    }

    /// Use η_u A^(u) of a bundle as the base and its single label vector as 𝔩.
    pub fn from_bundle(bundle: &AdjacencyBundle, k: usize, partition: Partition) -> Result<Self> {
        let label = match bundle.label_vectors() {
            [l] => l.clone(),
            ls => {
                return Err(Error::InvalidArgument(format!(
                    "the analytic perturbation path needs exactly one labeled class, found {}",
                    ls.len()
                )))
            }
        };
        Self::new(&(bundle.a_u() * bundle.eta_u()), label, k, partition)
    }

    pub fn n(&self) -> usize {
        self.base.nrows()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn label(&self) -> &DVector<f64> {
        &self.label
    }
    pub fn partition(&self) -> &Partition {
        &self.partition
    }
    /// Factor applied to the base so that its rows sum to one.
    pub fn scale(&self) -> f64 {
        self.scale
    }
    /// Rescaled base A(0).
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }
    pub fn base_embedding(&self) -> &SpectralEmbedding {
        &self.embedding
    }
    /// All eigenvalues of Ã(0), descending.
    pub fn base_spectrum(&self) -> &DVector<f64> {
        &self.spectrum.values
    }
    pub fn eta1(&self) -> f64 {
        1.0 / self.inter
    }
    pub fn eta2(&self) -> f64 {
        self.intra / self.inter
    }
    pub fn upsilon(&self) -> &DMatrix<f64> {
        &self.upsilon
    }
    pub fn base_kms(&self) -> f64 {
        self.intra / self.inter
    }
    pub fn gap_ratio(&self) -> f64 {
        self.embedding.decomposition.gap.ratio
    }

    /// Whether Υ is positive within classes and negative across them.
    pub fn upsilon_sign_pattern(&self) -> bool {
        let labels = self.partition.labels();
        let n = self.n();
        (0..n).all(|i| {
            (0..n).all(|j| {
                let v = self.upsilon[(i, j)];
                if labels[i] == labels[j] {
                    v > 0.0
                } else {
                    v < 0.0
                }
            })
        })
    }

    /// D'(0) as a diagonal: 𝔩 scaled by 1ᵀ𝔩, which is D_l when 𝔩 sums to one.
    fn degree_derivative(&self) -> DVector<f64> {
        &self.label * self.label.sum()
    }

    /// Ã(δ) and D(δ) for any δ with positive degrees, including small negative δ.
    pub fn normalized_at(&self, delta: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        normalize(&self.base, &self.label, delta)
    }

    fn embedding_any(&self, delta: f64) -> Result<SpectralEmbedding> {
        if delta == 0.0 {
            return Ok(self.embedding.clone());
        }
        let (a_norm, degrees) = self.normalized_at(delta)?;
        SpectralEmbedding::from_parts(&a_norm, &degrees, self.k)
    }

    /// 𝓜_kms(Π, Z(δ)). Small negative δ is accepted for finite differences.
    pub fn kms_at(&self, delta: f64) -> Result<f64> {
        if delta == 0.0 {
            return Ok(self.base_kms());
        }
        clustering::kmeans_measure(&self.partition, &self.embedding_any(delta)?.z)
    }

    fn rotated(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let v = &self.spectrum.vectors;
        let ups = v.transpose() * &self.upsilon * v;
        let lhat = v.tr_mul(&self.label);
        let dl = self.degree_derivative();
        let vd = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| dl[i] * v[(i, j)]);
        let dhat = v.transpose() * vd;
        (ups, lhat, dhat)
    }
}

fn normalize(base: &DMatrix<f64>, label: &DVector<f64>, delta: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = base.nrows();
    let mut a = base.clone();
    if delta != 0.0 {
        a.ger(delta, label, label, 1.0);
    }
    let degrees = DVector::from_iterator(n, (0..n).map(|i| a.row(i).sum()));
    let zero: Vec<usize> = (0..n).filter(|&i| degrees[i] <= EPS_DEGREE).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroDegree { vertices: zero });
    }
    let inv = degrees.map(|d| 1.0 / d.sqrt());
    Ok((linalg::symmetrize(&linalg::scale_sym(&a, &inv)), degrees))
}

fn embed(decomposition: SpectralDecomposition, degrees: &DVector<f64>) -> Result<SpectralEmbedding> {
    let n = degrees.len();
    let mut roots = Vec::with_capacity(decomposition.k);
    for (j, &lam) in decomposition.values.iter().enumerate() {
        if lam < -crate::spectral::EPS_NEG {
            return Err(Error::NegativeEigenvalue { index: j, value: lam });
        }
        roots.push(lam.max(0.0).sqrt());
    }
    let z = DMatrix::from_fn(n, decomposition.k, |i, j| {
        decomposition.vectors[(i, j)] * roots[j] / degrees[i].sqrt()
    });
    Ok(SpectralEmbedding { decomposition, z })
}

/// Z(δ) for δ ≥ 0.
pub fn perturbed_embedding(setup: &PerturbationSetup, delta: f64) -> Result<SpectralEmbedding> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("δ must be finite and ≥ 0, got {delta}")));
    }
    setup.embedding_any(delta)
}

/// Δ_kms(δ) = 𝓜_kms(0) − 𝓜_kms(δ); positive when the labels helped.
pub fn delta_kms(setup: &PerturbationSetup, delta: f64) -> Result<f64> {
    perturbed_embedding(setup, delta)?;
    Ok(setup.base_kms() - setup.kms_at(delta)?)
}

/// d λ_j / dδ at 0 for every eigenvalue of Ã(0): l̂_j² − λ_j D̂_jj.
pub fn eigenvalue_derivatives(setup: &PerturbationSetup) -> DVector<f64> {
    let (_, lhat, dhat) = setup.rotated();
    let lam = &setup.spectrum.values;
    DVector::from_fn(lam.len(), |j, _| lhat[j] * lhat[j] - lam[j] * dhat[(j, j)])
}

/// The three parts of d𝓜_kms/dδ at 0, each already multiplied by η₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeParts {
    /// Degree-normalization term Σ_j (λ_j/2) Tr(Υ(D_l Φ_j + Φ_j D_l)).
    pub a: f64,
    /// Eigenvalue-motion term −Σ_j λ_j' Tr(Υ Φ_j).
    pub b: f64,
    /// Eigenvector-motion term −Σ_j λ_j Tr(Υ Φ_j').
    pub c: f64,
    pub total: f64,
}

fn repeated_pairs(lam: &DVector<f64>, k: usize, within_top: bool) -> Vec<(usize, usize)> {
    let n = lam.len();
    let mut out = Vec::new();
    for j in 0..k {
        let start = if within_top { 0 } else { k };
        for i in start..n {
            if i != j && (lam[j] - lam[i]).abs() <= EPS_GAP && !(within_top && i < j) {
                out.push((j.min(i), j.max(i)));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Exact derivative as the sum of its three parts.
///
/// Every pair (j ≤ k, i ≠ j) appears with weight 1/(λ_j − λ_i), so all such
/// pairs must be separated.
pub fn analytic_derivative(setup: &PerturbationSetup) -> Result<DerivativeParts> {
    let lam = &setup.spectrum.values;
    let pairs = repeated_pairs(lam, setup.k, true);
    if !pairs.is_empty() {
        return Err(Error::RepeatedEigenvalues { pairs });
    }
    let (ups, lhat, dhat) = setup.rotated();
    let n = setup.n();
    let eta1 = setup.eta1();
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for j in 0..setup.k {
        let mut ud = 0.0;
        for i in 0..n {
            ud += ups[(j, i)] * dhat[(i, j)];
        }
        a += lam[j] * ud;
        let dlam = lhat[j] * lhat[j] - lam[j] * dhat[(j, j)];
        b -= dlam * ups[(j, j)];
        for i in 0..n {
            if i == j {
                continue;
            }
            let e = lhat[i] * lhat[j] - 0.5 * (lam[i] + lam[j]) * dhat[(i, j)];
            c -= 2.0 * lam[j] * ups[(i, j)] * e / (lam[j] - lam[i]);
        }
    }
    let (a, b, c) = (eta1 * a, eta1 * b, eta1 * c);
    Ok(DerivativeParts { a, b, c, total: a + b + c })
}

/// Exact derivative with the within-top-k pairs summed in closed form.
///
/// Only pairs straddling the cut (j ≤ k < i) carry 1/(λ_j − λ_i), so this
/// stays defined when eigenvalues repeat inside the top k.
pub fn projector_derivative(setup: &PerturbationSetup) -> Result<f64> {
    let lam = &setup.spectrum.values;
    let pairs = repeated_pairs(lam, setup.k, false);
    if !pairs.is_empty() {
        return Err(Error::RepeatedEigenvalues { pairs });
    }
    let (ups, lhat, dhat) = setup.rotated();
    let n = setup.n();
    let k = setup.k;
    let mut tot = 0.0;
    for j in 0..k {
        for i in 0..k {
            tot += ups[(i, j)] * (lhat[i] * lhat[j] - 2.0 * lam[j] * dhat[(i, j)]);
        }
        for i in k..n {
            tot += 2.0 * lam[j] / (lam[j] - lam[i]) * ups[(i, j)] * (lhat[i] * lhat[j] - lam[j] * dhat[(i, j)]);
        }
    }
    Ok(-setup.eta1() * tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeadingTerm {
    pub delta: f64,
    /// δ η₁ Tr(Υ(P_k 𝔩𝔩ᵀ(I + Q) − 2 Ã_k D_l)).
    pub value: f64,
    /// Exact d𝓜_kms/dδ at 0.
    pub derivative: f64,
    /// |value/δ + derivative|.
    pub discrepancy: f64,
    pub gap_ratio: f64,
}

pub fn leading_term(setup: &PerturbationSetup, delta: f64) -> Result<LeadingTerm> {
    let derivative = projector_derivative(setup)?;
    let dec = &setup.embedding.decomposition;
    let n = setup.n();
    let p = dec.projector();
    let q = &dec.null_vectors * dec.null_vectors.transpose();
    let l = &setup.label;
    let ll = l * l.transpose();
    let dl = setup.degree_derivative();
    let ak = dec.truncation();
    let ak_dl = DMatrix::from_fn(n, n, |i, j| ak[(i, j)] * dl[j]);
    let inner = &p * ll * (DMatrix::identity(n, n) + q) - ak_dl * 2.0;
    let unit = setup.eta1() * (&setup.upsilon * inner).trace();
    Ok(LeadingTerm {
        delta,
        value: delta * unit,
        derivative,
        discrepancy: (unit + derivative).abs(),
        gap_ratio: dec.gap.ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassTerm {
    pub class_index: usize,
    pub size: usize,
    /// Mean of 𝔩 over the class.
    pub connection: f64,
    pub intra_similarity: f64,
    pub inter_similarity: f64,
    /// Δ_{π_c}.
    pub delta_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub gap_ratio: f64,
    pub span_residual: f64,
    pub constancy_spread: f64,
    pub gap_ok: bool,
    pub span_ok: bool,
    pub constancy_ok: bool,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.gap_ok && self.span_ok && self.constancy_ok
    }

    fn first_failure(&self, cfg: &AssumptionConfig) -> Option<Error> {
        if !self.gap_ok {
            return Some(Error::AssumptionViolated {
                assumption: Assumption::Gap,
                measured: self.gap_ratio,
                threshold: cfg.min_gap_ratio,
            });
        }
        if !self.span_ok {
            return Some(Error::AssumptionViolated {
                assumption: Assumption::Span,
                measured: self.span_residual,
                threshold: cfg.span_tol,
            });
        }
        if !self.constancy_ok {
            return Some(Error::AssumptionViolated {
                assumption: Assumption::ClassConstancy,
                measured: self.constancy_spread,
                threshold: cfg.constancy_tol,
            });
        }
        None
    }
}

pub fn check_assumptions(setup: &PerturbationSetup, cfg: &AssumptionConfig) -> AssumptionReport {
    let dec = &setup.embedding.decomposition;
    let l = &setup.label;
    let lnorm = l.norm();
    let span_residual = if lnorm == 0.0 {
        0.0
    } else {
        (l - &dec.vectors * dec.vectors.tr_mul(l)).norm() / lnorm
    };
    let mut constancy_spread: f64 = 0.0;
    for b in setup.partition.blocks() {
        let vals: Vec<f64> = b.iter().map(|&i| l[i]).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let rel = if hi - lo == 0.0 { 0.0 } else { (hi - lo) / mean.abs().max(f64::MIN_POSITIVE) };
        constancy_spread = constancy_spread.max(rel);
    }
    let gap_ratio = dec.gap.ratio;
    AssumptionReport {
        gap_ratio,
        span_residual,
        constancy_spread,
        gap_ok: gap_ratio >= cfg.min_gap_ratio,
        span_ok: span_residual <= cfg.span_tol,
        constancy_ok: constancy_spread <= cfg.constancy_tol,
    }
}

/// Per-class Δ_{π_c} on the base embedding, without assumption checks.
pub fn class_terms(setup: &PerturbationSetup) -> Vec<ClassTerm> {
    let z = &setup.embedding.z;
    let n = setup.n();
    let gram = z * z.transpose();
    let labels = setup.partition.labels();
    setup
        .partition
        .blocks()
        .iter()
        .enumerate()
        .map(|(c, b)| {
            let size = b.len();
            let connection = b.iter().map(|&i| setup.label[i]).sum::<f64>() / size as f64;
            let mut intra = 0.0;
            let mut inter = 0.0;
            for &i in b {
                for j in 0..n {
                    if labels[j] == c {
                        intra += gram[(i, j)];
                    } else {
                        inter += gram[(i, j)];
                    }
                }
            }
            let intra_similarity = intra / (size * size) as f64;
            let outside = n - size;
            let inter_similarity = if outside == 0 { 0.0 } else { inter / (size * outside) as f64 };
            let delta_c = (connection - 1.0 / n as f64)
                - 2.0 * (1.0 - size as f64 / n as f64) * (intra_similarity - inter_similarity);
            ClassTerm { class_index: c, size, connection, intra_similarity, inter_similarity, delta_c }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClasswiseReport {
    pub delta: f64,
    pub classes: Vec<ClassTerm>,
    /// δ η₁ η₂ Σ_c |π_c| 𝔩_{π_c} Δ_{π_c}.
    pub aggregate: f64,
    pub delta_kms: f64,
    /// delta_kms − aggregate.
    pub margin: f64,
    pub holds: bool,
    /// Exact d𝓜_kms/dδ at 0.
    pub derivative: f64,
    /// −η₁ η₂ Σ_c |π_c| 𝔩_{π_c} Δ_{π_c}, the upper bound on the derivative.
    pub derivative_bound: f64,
    pub derivative_bound_holds: bool,
    pub assumptions: AssumptionReport,
}

/// Class-wise lower bound on Δ_kms(δ). Fails if any assumption is violated.
pub fn classwise_bound(setup: &PerturbationSetup, delta: f64, cfg: &AssumptionConfig) -> Result<ClasswiseReport> {
    let assumptions = check_assumptions(setup, cfg);
    if let Some(e) = assumptions.first_failure(cfg) {
        return Err(e);
    }
    let classes = class_terms(setup);
    let weighted: f64 = classes
        .iter()
        .map(|c| c.size as f64 * c.connection * c.delta_c)
        .sum();
    let ee = setup.eta1() * setup.eta2();
    let aggregate = delta * ee * weighted;
    let dk = delta_kms(setup, delta)?;
    let derivative = projector_derivative(setup)?;
    let derivative_bound = -ee * weighted;
    Ok(ClasswiseReport {
        delta,
        classes,
        aggregate,
        delta_kms: dk,
        margin: dk - aggregate,
        holds: dk >= aggregate - cfg.bound_slack,
        derivative,
        derivative_bound,
        derivative_bound_holds: derivative <= derivative_bound + cfg.bound_slack,
        assumptions,
    })
}

/// One row of a δ sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub m_kms: f64,
    pub delta_kms: f64,
    pub leading_term: f64,
    pub analytic_derivative: f64,
    pub class_deltas: Vec<f64>,
}

/// Evaluate the measures on every grid point, returned in grid order.
pub fn sweep(setup: &PerturbationSetup, grid: &[f64], exec: Execution) -> Result<Vec<SweepRow>> {
    let derivative = projector_derivative(setup)?;
    let unit = leading_term(setup, 1.0)?.value;
    let class_deltas: Vec<f64> = class_terms(setup).iter().map(|c| c.delta_c).collect();
    exec.map(grid, |&delta| {
        let dk = delta_kms(setup, delta)?;
        Ok(SweepRow {
            delta,
            m_kms: setup.base_kms() - dk,
            delta_kms: dk,
            leading_term: delta * unit,
            analytic_derivative: derivative,
            class_deltas: class_deltas.clone(),
        })
    })
    .into_iter()
    .collect()
}
