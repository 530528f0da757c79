//! Reference worlds: the six-object color/shape toy with its closed-form
//! spectra, and a seeded block-world generator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::Partition;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyBundle, AugmentationWorld, RowPolicy};
use crate::linalg::{self, Spectrum};

/// Class ids of the toy world.
pub const CUBE: usize = 0;
pub const SPHERE: usize = 1;
pub const CYLINDER: usize = 2;

/// η_u and η_l used for the toy graphs.
pub const TOY_ETA_U: f64 = 6.0;
pub const TOY_ETA_L: f64 = 4.0;

const SUM_TOL: f64 = 1e-12;
const MAX_RATIO: f64 = 0.05;
/// Minimum τ_c − τ_s for the unlabeled bound to be meaningful.
pub const MIN_UNLABELED_SEPARATION: f64 = 1e-4;

/// Which set of closed-form assumptions a parameter triple must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyRegime {
    Labeled,
    Unlabeled,
}

/// How the two cylinder rows of T are filled.
///
/// `AsPrinted` puts τ₁ on both cylinder entries, so those rows sum to 2τ₁ and
/// the world is built with relaxed row validation. `Stochastic` uses ½ and ½.
/// The normalized adjacency, and hence every spectral quantity, is the same
/// for both because the cylinders form their own component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CylinderRows {
    #[default]
    AsPrinted,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub tau1: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub regime: Option<ToyRegime>,
    #[serde(default)]
    pub cylinder_rows: CylinderRows,
}

impl ToyParams {
    pub fn new(tau1: f64, tau_c: f64, tau_s: f64) -> Self {
        ToyParams { tau1, tau_c, tau_s, regime: None, cylinder_rows: CylinderRows::AsPrinted }
    }

    pub fn with_regime(mut self, regime: ToyRegime) -> Self {
        self.regime = Some(regime);
        self
    }

    pub fn with_cylinders(mut self, rows: CylinderRows) -> Self {
        self.cylinder_rows = rows;
        self
    }

    /// τ_c / τ₁.
    pub fn ratio(&self) -> f64 {
        self.tau_c / self.tau1
    }

    pub fn validate(&self) -> Result<()> {
        let t = [self.tau1, self.tau_c, self.tau_s];
        if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("τ values must be nonnegative, got {t:?}")));
        }
        let s: f64 = t.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("τ₁ + τ_c + τ_s = {s}, expected 1")));
        }
        if self.tau1 <= 0.0 {
            return Err(Error::InvalidArgument("τ₁ must be positive".into()));
        }
        if let Some(r) = self.regime {
            self.check_regime(r)?;
        }
        Ok(())
    }

    pub fn check_regime(&self, regime: ToyRegime) -> Result<()> {
        let r = self.ratio();
        if r > MAX_RATIO {
            return Err(Error::Regime(format!("τ_c/τ₁ = {r} exceeds {MAX_RATIO}")));
        }
        match regime {
            ToyRegime::Labeled => {
                if self.tau_s < 4.0 / 9.0 * self.tau_c || self.tau_s > self.tau_c {
                    return Err(Error::Regime(format!(
                        "labeled regime needs (4/9)τ_c ≤ τ_s ≤ τ_c (τ_s = {}, τ_c = {})",
                        self.tau_s, self.tau_c
                    )));
                }
            }
            ToyRegime::Unlabeled => {
                if self.tau_s >= self.tau_c {
                    return Err(Error::Regime(format!(
                        "unlabeled regime needs τ_s < τ_c (τ_s = {}, τ_c = {})",
                        self.tau_s, self.tau_c
                    )));
                }
            }
        }
        Ok(())
    }
}

/// T for the toy. Node order: red cube, blue cube, red sphere, blue sphere,
/// then the two cylinders.
pub fn toy_transition(p: &ToyParams) -> DMatrix<f64> {
    let (t1, tc, ts) = (p.tau1, p.tau_c, p.tau_s);
    let cyl = match p.cylinder_rows {
        CylinderRows::AsPrinted => t1,
        CylinderRows::Stochastic => 0.5,
    };
    #[rustfmt::skip]
    let rows = [
        t1, ts, tc, 0.0, 0.0, 0.0,
        ts, t1, 0.0, tc, 0.0, 0.0,
        tc, 0.0, t1, ts, 0.0, 0.0,
        0.0, tc, ts, t1, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, cyl, cyl,
        0.0, 0.0, 0.0, 0.0, cyl, cyl,
    ];
    DMatrix::from_row_slice(6, 6, &rows)
}

pub fn toy_classes() -> Vec<usize> {
    vec![CUBE, CUBE, SPHERE, SPHERE, CYLINDER, CYLINDER]
}

pub fn toy_partition() -> Partition {
    Partition::from_labels(&toy_classes()).expect("static partition")
}

/// Row indices of the labeled cube samples.
pub fn toy_labeled_indices() -> BTreeMap<usize, Vec<usize>> {
    BTreeMap::from([(CUBE, vec![0, 1])])
}

pub fn build_toy(params: &ToyParams) -> Result<AugmentationWorld> {
    params.validate()?;
    let t = toy_transition(params);
    let p = DVector::from_element(6, 1.0 / 6.0);
    let labeled = BTreeMap::from([(CUBE, DVector::from_vec(vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]))]);
    let policy = match params.cylinder_rows {
        CylinderRows::AsPrinted => RowPolicy::Relaxed,
        CylinderRows::Stochastic => RowPolicy::Stochastic,
    };
    AugmentationWorld::with_policy(t, p, toy_classes(), labeled, policy)
}

/// Three leading eigenpairs; vectors are unnormalized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub values: [f64; 3],
    pub vectors: DMatrix<f64>,
}

pub fn closed_form_labeled(params: &ToyParams) -> Result<ClosedForm> {
    params.validate()?;
    params.check_regime(ToyRegime::Labeled)?;
    let r3 = 3.0_f64.sqrt();
    #[rustfmt::skip]
    let v = DMatrix::from_column_slice(6, 3, &[
        0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
        r3, r3, 1.0, 1.0, 0.0, 0.0,
        1.0, 1.0, -r3, -r3, 0.0, 0.0,
    ]);
    Ok(ClosedForm { values: [1.0, 1.0, 1.0 - 16.0 / 3.0 * params.ratio()], vectors: v })
}

pub fn closed_form_unlabeled(params: &ToyParams) -> Result<ClosedForm> {
    params.validate()?;
    params.check_regime(ToyRegime::Unlabeled)?;
    if params.tau_c - params.tau_s < MIN_UNLABELED_SEPARATION {
        return Err(Error::NearDegenerate(format!(
            "τ_c − τ_s = {} is below {MIN_UNLABELED_SEPARATION}",
            params.tau_c - params.tau_s
        )));
    }
    #[rustfmt::skip]
    let v = DMatrix::from_column_slice(6, 3, &[
        0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
        1.0, 1.0, 1.0, 1.0, 0.0, 0.0,
        1.0, -1.0, 1.0, -1.0, 0.0, 0.0,
    ]);
    Ok(ClosedForm {
        values: [1.0, 1.0, 1.0 - 4.0 * params.tau_s / params.tau1],
        vectors: v,
    })
}

/// The two remaining nonzero closed-form eigenvalues (λ̂_e, λ̂_f) of the labeled toy.
pub fn labeled_lower_eigenvalues(params: &ToyParams) -> (f64, f64) {
    let s = params.tau_s / params.tau1;
    let c = params.tau_c / params.tau1;
    let root = ((3.0 - 12.0 * s - 16.0 * c).powi(2) + 108.0 * c * c).sqrt();
    let rest = -24.0 * s - 20.0 * c + 6.0;
    ((root + rest) / 9.0, (-root + rest) / 9.0)
}

/// The toy graph for a regime: η_l = 4 with labels, 0 without.
pub fn toy_bundle(params: &ToyParams, regime: ToyRegime) -> Result<AdjacencyBundle> {
    let world = build_toy(params)?;
    let eta_l = match regime {
        ToyRegime::Labeled => TOY_ETA_L,
        ToyRegime::Unlabeled => 0.0,
    };
    AdjacencyBundle::from_world(&world, TOY_ETA_U, eta_l)
}

/// Comparison of the numeric top-3 spectrum with the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub regime: ToyRegime,
    pub tau1: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    pub numeric: [f64; 3],
    pub closed_form: [f64; 3],
    pub eigen_deviation: [f64; 3],
    pub eigen_bound: f64,
    pub sin_distance: f64,
    pub sin_bound: f64,
    pub eigen_ok: bool,
    pub sin_ok: bool,
    /// λ̂₃ > λ̂_e, only checked in the labeled regime.
    pub ordering_ok: Option<bool>,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.eigen_ok && self.sin_ok && self.ordering_ok.unwrap_or(true)
    }

    /// Observed constants: max deviation / (τ_c/τ₁)² and sin distance / its scale.
    pub fn observed_constants(&self, constant: f64) -> (f64, f64) {
        let dev = self.eigen_deviation.iter().copied().fold(0.0, f64::max);
        (dev * constant / self.eigen_bound, self.sin_distance * constant / self.sin_bound)
    }
}

/// Check |λ_i − λ̂_i| ≤ c (τ_c/τ₁)² and the sin-distance bound for one triple.
pub fn check_bounds(params: &ToyParams, regime: ToyRegime, constant: f64) -> Result<BoundCheck> {
    let cf = match regime {
        ToyRegime::Labeled => closed_form_labeled(params)?,
        ToyRegime::Unlabeled => closed_form_unlabeled(params)?,
    };
    let bundle = toy_bundle(params, regime)?;
    let spec = Spectrum::of(bundle.a_norm());
    let numeric = [spec.values[0], spec.values[1], spec.values[2]];
    let mut eigen_deviation = [0.0; 3];
    for i in 0..3 {
        eigen_deviation[i] = (numeric[i] - cf.values[i]).abs();
    }
    let r = params.ratio();
    let eigen_bound = constant * r * r;
    let sin_distance = linalg::sin_theta_distance(&spec.vectors.columns(0, 3).into_owned(), &cf.vectors);
    let sin_bound = match regime {
        ToyRegime::Labeled => constant * r,
        ToyRegime::Unlabeled => {
            constant * params.tau_c * params.tau_c / (params.tau1 * (params.tau_c - params.tau_s))
        }
    };
    let ordering_ok = (regime == ToyRegime::Labeled)
        .then(|| cf.values[2] > labeled_lower_eigenvalues(params).0);
    Ok(BoundCheck {
        regime,
        tau1: params.tau1,
        tau_c: params.tau_c,
        tau_s: params.tau_s,
        numeric,
        closed_form: cf.values,
        eigen_deviation,
        eigen_bound,
        sin_distance,
        sin_bound,
        eigen_ok: eigen_deviation.iter().all(|&d| d <= eigen_bound),
        sin_ok: sin_distance <= sin_bound,
        ordering_ok,
    })
}

/// Deterministic parameter triples inside a regime. The first is always
/// (0.95, 0.03, 0.02).
pub fn regime_samples(regime: ToyRegime, count: usize, seed: u64) -> Vec<ToyParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(ToyParams::new(0.95, 0.03, 0.02).with_regime(regime));
    }
    while out.len() < count {
        let r: f64 = rng.random_range(1e-3..MAX_RATIO);
        let frac: f64 = match regime {
            ToyRegime::Labeled => rng.random_range(4.0 / 9.0..=1.0),
            ToyRegime::Unlabeled => rng.random_range(0.0..1.0),
        };
        let tau1 = 1.0 / (1.0 + r + frac * r);
        let tau_c = r * tau1;
        let tau_s = frac * r * tau1;
        let p = ToyParams::new(1.0 - tau_c - tau_s, tau_c, tau_s).with_regime(regime);
        let ok = p.validate().is_ok()
            && (regime == ToyRegime::Labeled || p.tau_c - p.tau_s >= MIN_UNLABELED_SEPARATION);
        if ok {
            out.push(p);
        }
    }
    out
}

/// Which natural samples of a labeled class carry P_l mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub class: usize,
    /// Global sample indices; `None` means every sample of the class, uniformly.
    #[serde(default)]
    pub samples: Option<Vec<usize>>,
}

/// Class-structured augmentation: T ∝ (1−ε)(α T_K + β S + s I) + ε R.
///
/// T_K spreads mass over classes by the row-normalized affinity K, S averages
/// inside subgroups of each class and R is a seeded doubly-stochastic noise
/// matrix. P is uniform. With equal class sizes and symmetric K the result is
/// doubly stochastic, so Tᵀ diag(P) T has constant row sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWorldParams {
    pub class_sizes: Vec<usize>,
    pub affinity: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub subgroups: usize,
    pub class_weight: f64,
    pub subgroup_weight: f64,
    pub self_weight: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub labeled: Vec<LabelSpec>,
}

fn one() -> usize {
    1
}

impl BlockWorldParams {
    pub fn n(&self) -> usize {
        self.class_sizes.iter().sum()
    }

    pub fn class_of(&self) -> Vec<usize> {
        self.class_sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let c = self.class_sizes.len();
        if c == 0 || self.class_sizes.contains(&0) {
            return Err(Error::InvalidArgument("class sizes must be positive".into()));
        }
        if self.affinity.len() != c || self.affinity.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidArgument(format!("affinity must be {c}x{c}")));
        }
        let weights = [self.class_weight, self.subgroup_weight, self.self_weight];
        if weights.iter().chain(self.affinity.iter().flatten()).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("strengths must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!("noise must be in [0, 1), got {}", self.noise)));
        }
        if self.subgroups == 0 {
            return Err(Error::InvalidArgument("subgroups must be at least 1".into()));
        }
        Ok(())
    }
}

fn sinkhorn(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut r = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    for _ in 0..10_000 {
        for i in 0..n {
            let s = r.row(i).sum();
            r.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let mut err = 0.0_f64;
        for j in 0..n {
            let s: f64 = r.column(j).sum();
            err = err.max((s - 1.0).abs());
            r.column_mut(j).iter_mut().for_each(|v| *v /= s);
        }
        if err < 1e-15 {
            break;
        }
    }
    for i in 0..n {
        let s = r.row(i).sum();
        r.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    r
}

pub fn block_transition(params: &BlockWorldParams, seed: u64) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = params.n();
    let labels = params.class_of();
    let k: Vec<Vec<f64>> = params
        .affinity
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect();
    let mut starts = vec![0; params.class_sizes.len()];
    for c in 1..starts.len() {
        starts[c] = starts[c - 1] + params.class_sizes[c - 1];
    }
    let group = |i: usize| {
        let c = labels[i];
        let size = params.class_sizes[c];
        (c, (i - starts[c]) * params.subgroups / size)
    };
    let group_size: BTreeMap<(usize, usize), usize> = (0..n).fold(BTreeMap::new(), |mut m, i| {
        *m.entry(group(i)).or_insert(0) += 1;
        m
    });
    let wsum = params.class_weight + params.subgroup_weight + params.self_weight;
    let (a, b, s) = if wsum > 0.0 {
        (params.class_weight / wsum, params.subgroup_weight / wsum, params.self_weight / wsum)
    } else {
        (0.0, 0.0, 0.0)
    };
    let mut t = DMatrix::from_fn(n, n, |m, x| {
        let tk = k[labels[m]][labels[x]] / params.class_sizes[labels[x]] as f64;
        let sg = if group(m) == group(x) { 1.0 / group_size[&group(m)] as f64 } else { 0.0 };
        let id = if m == x { 1.0 } else { 0.0 };
        (1.0 - params.noise) * (a * tk + b * sg + s * id)
    });
    if params.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        t += sinkhorn(n, &mut rng) * params.noise;
    }
    for m in 0..n {
        let sum = t.row(m).sum();
        if sum <= 0.0 {
            return Err(Error::ZeroRow(m));
        }
        t.row_mut(m).iter_mut().for_each(|v| *v /= sum);
    }
    Ok(t)
}

pub fn synth_block_world(params: &BlockWorldParams, seed: u64) -> Result<AugmentationWorld> {
    let t = block_transition(params, seed)?;
    let n = t.nrows();
    let class_of = params.class_of();
    let mut labeled = BTreeMap::new();
    for spec in &params.labeled {
        let members: Vec<usize> = match &spec.samples {
            Some(s) => s.clone(),
            None => (0..n).filter(|&i| class_of[i] == spec.class).collect(),
        };
        if members.is_empty() || members.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument(format!("bad labeled samples for class {}", spec.class)));
        }
        let mut pl = DVector::zeros(n);
        for &i in &members {
            pl[i] += 1.0 / members.len() as f64;
        }
        if labeled.insert(spec.class, pl).is_some() {
            return Err(Error::InvalidArgument(format!("class {} labeled twice", spec.class)));
        }
    }
    AugmentationWorld::new(t, DVector::from_element(n, 1.0 / n as f64), class_of, labeled)
}

/// λ_k / λ_{k+1} of the block world's normalized unlabeled adjacency.
pub fn block_gap_ratio(params: &BlockWorldParams, k: usize, seed: u64) -> Result<f64> {
    let world = synth_block_world(params, seed)?;
    let bundle = AdjacencyBundle::from_world(&world, 1.0, 0.0)?;
    let spec = Spectrum::of(bundle.a_norm());
    if k == 0 || k >= spec.len() {
        return Err(Error::InvalidArgument(format!("k={k} out of range")));
    }
    Ok(spec.values[k - 1] / spec.values[k])
}

/// Adjust the self weight (keeping class + self weight fixed) so that the gap
/// ratio at `k` equals `target`. Bisection runs in log space.
pub fn tune_gap(params: &BlockWorldParams, k: usize, target: f64, seed: u64) -> Result<BlockWorldParams> {
    let budget = params.class_weight + params.self_weight;
    let at = |s: f64| -> Result<(BlockWorldParams, f64)> {
        let mut p = params.clone();
        p.self_weight = s;
        p.class_weight = budget - s;
        let g = block_gap_ratio(&p, k, seed)?;
        Ok((p, g))
    };
    let mut lo = 1e-6 * budget;
    let mut hi = budget * (1.0 - 1e-6);
    let (_, g_lo) = at(lo)?;
    let (_, g_hi) = at(hi)?;
    let decreasing = g_lo > g_hi;
    let (gmin, gmax) = if decreasing { (g_hi, g_lo) } else { (g_lo, g_hi) };
    if !(target >= gmin && target <= gmax) {
        return Err(Error::InvalidArgument(format!(
            "gap ratio {target} not reachable (range {gmin}..{gmax})"
        )));
    }
    let mut best = at(lo)?;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let (p, g) = at(mid)?;
        if (g > target) == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
        best = (p, g);
        if ((best.1 - target) / target).abs() < 1e-10 || hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_triple_entries() {
        let p = ToyParams::new(0.95, 0.03, 0.02);
        let t = toy_transition(&p);
        assert_eq!(t[(0, 1)], 0.02);
        assert_eq!(t[(0, 2)], 0.03);
        assert_eq!(t[(0, 4)], 0.0);
    }

    #[test]
    fn limit_case_is_block_diagonal() {
        let p = ToyParams::new(1.0, 0.0, 0.0).with_cylinders(CylinderRows::Stochastic);
        let t = toy_transition(&p);
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(t[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn regime_errors() {
        let p = ToyParams::new(0.95, 0.03, 0.02).with_regime(ToyRegime::Labeled);
        assert!(build_toy(&p).is_ok());
        let bad = ToyParams::new(0.96, 0.03, 0.01).with_regime(ToyRegime::Labeled);
        assert!(matches!(build_toy(&bad), Err(Error::Regime(_))));
        let wide = ToyParams::new(0.8, 0.15, 0.05).with_regime(ToyRegime::Unlabeled);
        assert!(matches!(build_toy(&wide), Err(Error::Regime(_))));
        let close = ToyParams::new(0.95005, 0.025, 0.02495);
        assert!(matches!(closed_form_unlabeled(&close), Err(Error::NearDegenerate(_))));
    }

    #[test]
    fn samples_are_in_regime_and_deterministic() {
        for regime in [ToyRegime::Labeled, ToyRegime::Unlabeled] {
            let a = regime_samples(regime, 20, 3);
            assert_eq!(a, regime_samples(regime, 20, 3));
            for p in &a {
                p.check_regime(regime).unwrap();
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_row_error() {
        let p = BlockWorldParams {
            class_sizes: vec![2, 2],
            affinity: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            subgroups: 1,
            class_weight: 1.0,
            subgroup_weight: 0.0,
            self_weight: 0.0,
            noise: 0.0,
            labeled: vec![],
        };
        assert!(matches!(synth_block_world(&p, 0), Err(Error::ZeroRow(0))));
    }
}
