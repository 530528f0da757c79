//! Augmentation worlds and the adjacency matrices they induce.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const ROW_TOL: f64 = 1e-12;
const PROB_TOL: f64 = 1e-12;
/// Degrees at or below this are rejected.
pub const EPS_DEGREE: f64 = 1e-12;

/// Whether rows of `T` must be probability distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RowPolicy {
    #[default]
    Stochastic,
    /// Rows must be nonnegative and nonzero but need not sum to one.
    Relaxed,
}

/// A finite generative model: natural samples, their augmentation
/// distributions, a sampling marginal and the labeled-class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationWorld {
    transition: DMatrix<f64>,
    marginal: DVector<f64>,
    class_of: Vec<usize>,
    labeled: BTreeMap<usize, DVector<f64>>,
    row_policy: RowPolicy,
}

/// On-disk form of a world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub natural_count: usize,
    pub augmented_count: usize,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub class_of: Vec<usize>,
    pub labeled_classes: Vec<usize>,
    #[serde(rename = "P_l")]
    pub p_l: BTreeMap<usize, Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_unnormalized_rows: bool,
}

impl AugmentationWorld {
    /// Validate and build a world with row-stochastic `T`.
    pub fn new(
        transition: DMatrix<f64>,
        marginal: DVector<f64>,
        class_of: Vec<usize>,
        labeled: BTreeMap<usize, DVector<f64>>,
    ) -> Result<Self> {
        Self::with_policy(transition, marginal, class_of, labeled, RowPolicy::Stochastic)
    }

    pub fn with_policy(
        transition: DMatrix<f64>,
        marginal: DVector<f64>,
        class_of: Vec<usize>,
        labeled: BTreeMap<usize, DVector<f64>>,
        row_policy: RowPolicy,
    ) -> Result<Self> {
        let (m, n) = transition.shape();
        let bad = |msg: String| Err(Error::InvalidWorld(msg));
        if m == 0 || n == 0 {
            return bad("T must have at least one row and one column".into());
        }
        if marginal.len() != m {
            return bad(format!("P has length {} but T has {m} rows", marginal.len()));
        }
        if class_of.len() != m {
            return bad(format!("class_of has length {} but T has {m} rows", class_of.len()));
        }
        for (idx, &v) in transition.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                // column-major storage
                return bad(format!("T[{}][{}] = {v} is not a finite nonnegative value", idx % m, idx / m));
            }
        }
        for r in 0..m {
            let s: f64 = transition.row(r).iter().sum();
            match row_policy {
                RowPolicy::Stochastic if (s - 1.0).abs() > ROW_TOL => {
                    return bad(format!("row {r} of T sums to {s}, expected 1"));
                }
                RowPolicy::Relaxed if s <= 0.0 => {
                    return bad(format!("row {r} of T is all zero"));
                }
                _ => {}
            }
        }
        check_distribution(&marginal, "P")?;
        let classes: BTreeSet<usize> = class_of.iter().copied().collect();
        for (&c, pl) in &labeled {
            if !classes.contains(&c) {
                return bad(format!("labeled class {c} has no natural samples"));
            }
            if pl.len() != m {
                return bad(format!("P_l[{c}] has length {}, expected {m}", pl.len()));
            }
            check_distribution(pl, &format!("P_l[{c}]"))?;
            for (i, &p) in pl.iter().enumerate() {
                if p > 0.0 && class_of[i] != c {
                    return bad(format!("P_l[{c}] puts mass on sample {i} of class {}", class_of[i]));
                }
            }
        }
        Ok(AugmentationWorld {
            transition,
            marginal,
            class_of,
            labeled,
            row_policy,
        })
    }

    pub fn from_file_repr(f: WorldFile) -> Result<Self> {
        let m = f.natural_count;
        let n = f.augmented_count;
        if f.t.len() != m || f.t.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidWorld(format!("T must be {m}x{n}")));
        }
        let t = DMatrix::from_fn(m, n, |i, j| f.t[i][j]);
        let declared: BTreeSet<usize> = f.labeled_classes.iter().copied().collect();
        let given: BTreeSet<usize> = f.p_l.keys().copied().collect();
        if declared != given {
            return Err(Error::InvalidWorld(format!(
                "labeled_classes {declared:?} do not match P_l keys {given:?}"
            )));
        }
        let labeled = f
            .p_l
            .into_iter()
            .map(|(c, v)| (c, DVector::from_vec(v)))
            .collect();
        let policy = if f.allow_unnormalized_rows {
            RowPolicy::Relaxed
        } else {
            RowPolicy::Stochastic
        };
        Self::with_policy(t, DVector::from_vec(f.p), f.class_of, labeled, policy)
    }

    pub fn to_file_repr(&self) -> WorldFile {
        let (m, n) = self.transition.shape();
        WorldFile {
            natural_count: m,
            augmented_count: n,
            t: (0..m)
                .map(|i| self.transition.row(i).iter().copied().collect())
                .collect(),
            p: self.marginal.iter().copied().collect(),
            class_of: self.class_of.clone(),
            labeled_classes: self.labeled.keys().copied().collect(),
            p_l: self
                .labeled
                .iter()
                .map(|(&c, v)| (c, v.iter().copied().collect()))
                .collect(),
            allow_unnormalized_rows: self.row_policy == RowPolicy::Relaxed,
        }
    }

    pub fn natural_count(&self) -> usize {
        self.transition.nrows()
    }

    pub fn augmented_count(&self) -> usize {
        self.transition.ncols()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn marginal(&self) -> &DVector<f64> {
        &self.marginal
    }

    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    pub fn row_policy(&self) -> RowPolicy {
        self.row_policy
    }

    pub fn labeled_classes(&self) -> Vec<usize> {
        self.labeled.keys().copied().collect()
    }

    pub fn labeled_distribution(&self, class_id: usize) -> Option<&DVector<f64>> {
        self.labeled.get(&class_id)
    }

    /// All class ids, sorted.
    pub fn classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.class_of.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Marginal of augmented points, u = Tᵀ P.
    pub fn augmented_marginal(&self) -> DVector<f64> {
        self.transition.tr_mul(&self.marginal)
    }

    /// Ground-truth class of each vertex when vertices are identified with
    /// natural samples (M = N). Returns `None` otherwise.
    pub fn vertex_classes(&self) -> Option<Vec<usize>> {
        (self.natural_count() == self.augmented_count()).then(|| self.class_of.clone())
    }
}

fn check_distribution(v: &DVector<f64>, name: &str) -> Result<()> {
    if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidWorld(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PROB_TOL * (v.len() as f64).max(1.0) {
        return Err(Error::InvalidWorld(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// A^(u) = Tᵀ diag(P) T.
pub fn build_unlabeled_adjacency(world: &AugmentationWorld) -> DMatrix<f64> {
    let sqrt_p = world.marginal.map(f64::sqrt);
    let b = DMatrix::from_fn(world.natural_count(), world.augmented_count(), |m, x| {
        sqrt_p[m] * world.transition[(m, x)]
    });
    linalg::symmetrize(&b.tr_mul(&b))
}

/// 𝔩 = Tᵀ P_l for one labeled class.
pub fn build_label_vector(world: &AugmentationWorld, class_id: usize) -> Result<DVector<f64>> {
    let pl = world
        .labeled
        .get(&class_id)
        .ok_or(Error::UnknownClass(class_id))?;
    Ok(world.transition.tr_mul(pl))
}

/// Label vectors for every labeled class, in ascending class order.
pub fn label_vectors(world: &AugmentationWorld) -> Vec<DVector<f64>> {
    world
        .labeled
        .values()
        .map(|pl| world.transition.tr_mul(pl))
        .collect()
}

/// The composed graph: A = η_u A^(u) + η_l Σ 𝔩_i 𝔩_iᵀ with degrees and Ã.
#[derive(Debug, Clone)]
pub struct AdjacencyBundle {
    a_u: DMatrix<f64>,
    label_vectors: Vec<DVector<f64>>,
    eta_u: f64,
    eta_l: f64,
    a: DMatrix<f64>,
    degrees: DVector<f64>,
    a_norm: DMatrix<f64>,
}

impl AdjacencyBundle {
    pub fn a_u(&self) -> &DMatrix<f64> {
        &self.a_u
    }
    pub fn label_vectors(&self) -> &[DVector<f64>] {
        &self.label_vectors
    }
    pub fn eta_u(&self) -> f64 {
        self.eta_u
    }
    pub fn eta_l(&self) -> f64 {
        self.eta_l
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }
    pub fn a_norm(&self) -> &DMatrix<f64> {
        &self.a_norm
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Σ_i 𝔩_i 𝔩_iᵀ, materialized on request.
    pub fn label_gram(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut g = DMatrix::zeros(n, n);
        for l in &self.label_vectors {
            g.ger(1.0, l, l, 1.0);
        }
        g
    }

    /// Build from a world in one step.
    pub fn from_world(world: &AugmentationWorld, eta_u: f64, eta_l: f64) -> Result<Self> {
        compose_adjacency(
            build_unlabeled_adjacency(world),
            label_vectors(world),
            eta_u,
            eta_l,
        )
    }
}

pub fn compose_adjacency(
    a_u: DMatrix<f64>,
    label_vectors: Vec<DVector<f64>>,
    eta_u: f64,
    eta_l: f64,
) -> Result<AdjacencyBundle> {
    if !(eta_u >= 0.0 && eta_l >= 0.0 && eta_u + eta_l > 0.0) || !eta_u.is_finite() || !eta_l.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need η_u ≥ 0, η_l ≥ 0 and η_u + η_l > 0 (got {eta_u}, {eta_l})"
        )));
    }
    let n = a_u.nrows();
    if a_u.ncols() != n {
        return Err(Error::DimensionMismatch(format!("A_u is {}x{}", n, a_u.ncols())));
    }
    if let Some(l) = label_vectors.iter().find(|l| l.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "label vector has length {}, expected {n}",
            l.len()
        )));
    }
    let mut a = &a_u * eta_u;
    for l in &label_vectors {
        a.ger(eta_l, l, l, 1.0);
    }
    let degrees = DVector::from_iterator(n, (0..n).map(|i| a.row(i).sum()));
    let zero: Vec<usize> = (0..n).filter(|&i| degrees[i] <= EPS_DEGREE).collect();
    if !zero.is_empty() {
        return Err(Error::ZeroDegree { vertices: zero });
    }
    let inv_sqrt = degrees.map(|d| 1.0 / d.sqrt());
    let a_norm = linalg::symmetrize(&linalg::scale_sym(&a, &inv_sqrt));
    Ok(AdjacencyBundle {
        a_u,
        label_vectors,
        eta_u,
        eta_l,
        a,
        degrees,
        a_norm,
    })
}
