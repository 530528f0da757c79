//! K-means measures of an embedding against a ground-truth partition, the
//! cluster error ratio, seeded K-means and Hungarian-matched accuracy.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Inter-class scatter at or below this makes the K-means measure undefined.
pub const EPS_INTER: f64 = 1e-12;

/// Disjoint nonempty blocks covering 0..N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    class_ids: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Group indices by label. Blocks are ordered by ascending label.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidPartition("no points".into()));
        }
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            map.entry(c).or_default().push(i);
        }
        Ok(Partition {
            n: labels.len(),
            class_ids: map.keys().copied().collect(),
            blocks: map.into_values().collect(),
        })
    }

    pub fn from_blocks(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            for &i in b {
                if i >= n || seen[i] {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} repeated or out of range"
                    )));
                }
                seen[i] = true;
            }
        }
        if n == 0 {
            return Err(Error::InvalidPartition("no points".into()));
        }
        let class_ids = (0..blocks.len()).collect();
        Ok(Partition { n, class_ids, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn class_count(&self) -> usize {
        self.blocks.len()
    }
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    /// Block index of every point.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (c, b) in self.blocks.iter().enumerate() {
            for &i in b {
                out[i] = c;
            }
        }
        out
    }

    /// H with H_ij = 1/|π| when i, j share block π.
    pub fn membership_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for b in &self.blocks {
            let w = 1.0 / b.len() as f64;
            for &i in b {
                for &j in b {
                    h[(i, j)] = w;
                }
            }
        }
        h
    }

    fn check_rows(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "embedding has {} rows, partition covers {}",
                z.nrows(),
                self.n
            )));
        }
        Ok(())
    }
}

fn row_mean(z: &DMatrix<f64>, idx: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; z.ncols()];
    for &i in idx {
        for (j, v) in m.iter_mut().enumerate() {
            *v += z[(i, j)];
        }
    }
    let inv = 1.0 / idx.len() as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

fn sq_dist(z: &DMatrix<f64>, i: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, &cj)| (z[(i, j)] - cj).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scatter {
    pub intra: f64,
    pub inter: f64,
}

/// Intra- and inter-class scatter by direct sums.
pub fn intra_inter(partition: &Partition, z: &DMatrix<f64>) -> Result<Scatter> {
    partition.check_rows(z)?;
    let all: Vec<usize> = (0..partition.n).collect();
    let grand = row_mean(z, &all);
    let mut intra = 0.0;
    let mut inter = 0.0;
    for b in &partition.blocks {
        let mu = row_mean(z, b);
        intra += b.iter().map(|&i| sq_dist(z, i, &mu)).sum::<f64>();
        let d: f64 = mu.iter().zip(&grand).map(|(a, g)| (a - g).powi(2)).sum();
        inter += b.len() as f64 * d;
    }
    Ok(Scatter { intra, inter })
}

/// Same quantities via Tr((I − H) Z Zᵀ) and Tr((H − 11ᵀ/N) Z Zᵀ).
pub fn intra_inter_trace(partition: &Partition, z: &DMatrix<f64>) -> Result<Scatter> {
    partition.check_rows(z)?;
    let n = partition.n;
    let h = partition.membership_matrix();
    let gram = z * z.transpose();
    let intra = ((DMatrix::identity(n, n) - &h) * &gram).trace();
    let inter = ((h - DMatrix::from_element(n, n, 1.0 / n as f64)) * &gram).trace();
    Ok(Scatter { intra, inter })
}

pub fn kmeans_measure(partition: &Partition, z: &DMatrix<f64>) -> Result<f64> {
    let s = intra_inter(partition, z)?;
    if s.inter <= EPS_INTER {
        return Err(Error::DegenerateInter(s.inter));
    }
    Ok(s.intra / s.inter)
}

/// Harmonic mean of pairwise error ratios, or undefined when some |ξ| is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorRatio {
    Defined(f64),
    Undefined,
}

impl ErrorRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            ErrorRatio::Defined(v) => Some(v),
            ErrorRatio::Undefined => None,
        }
    }
}

impl Serialize for ErrorRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ErrorRatio::Defined(v) => s.serialize_f64(*v),
            ErrorRatio::Undefined => s.serialize_str("undefined"),
        }
    }
}

/// |ξ_{π→π'}| for every ordered pair of distinct blocks, indexed [from][to].
pub fn misassigned_counts(partition: &Partition, z: &DMatrix<f64>) -> Result<Vec<Vec<usize>>> {
    partition.check_rows(z)?;
    let means: Vec<Vec<f64>> = partition.blocks.iter().map(|b| row_mean(z, b)).collect();
    let c = partition.class_count();
    let mut out = vec![vec![0; c]; c];
    for (p, b) in partition.blocks.iter().enumerate() {
        for (q, mu_q) in means.iter().enumerate() {
            if p == q {
                continue;
            }
            out[p][q] = b
                .iter()
                .filter(|&&i| sq_dist(z, i, &means[p]) >= sq_dist(z, i, mu_q))
                .count();
        }
    }
    Ok(out)
}

pub fn error_ratio(partition: &Partition, z: &DMatrix<f64>) -> Result<ErrorRatio> {
    let c = partition.class_count();
    if c < 2 {
        return Err(Error::InvalidPartition("error ratio needs at least two classes".into()));
    }
    let xi = misassigned_counts(partition, z)?;
    let mut inv_sum = 0.0;
    for p in 0..c {
        for q in 0..c {
            if p == q {
                continue;
            }
            if xi[p][q] == 0 {
                return Ok(ErrorRatio::Undefined);
            }
            let size = (partition.blocks[p].len() + partition.blocks[q].len()) as f64;
            inv_sum += size / xi[p][q] as f64;
        }
    }
    Ok(ErrorRatio::Defined((c * (c - 1)) as f64 / inv_sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterScores {
    pub intra: f64,
    pub inter: f64,
    /// `None` when the inter-class scatter is degenerate.
    pub kms: Option<f64>,
    pub error_ratio: ErrorRatio,
}

pub fn cluster_scores(partition: &Partition, z: &DMatrix<f64>) -> Result<ClusterScores> {
    let s = intra_inter(partition, z)?;
    let kms = (s.inter > EPS_INTER).then(|| s.intra / s.inter);
    let error_ratio = if partition.class_count() >= 2 {
        error_ratio(partition, z)?
    } else {
        ErrorRatio::Undefined
    };
    Ok(ClusterScores { intra: s.intra, inter: s.inter, kms, error_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { seed: 0, max_iters: 300, restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of every row. Clusters 0..L are the labeled classes in
    /// ascending class-id order; the rest are novel.
    pub assignment: Vec<usize>,
    /// Known class id of each of the first L clusters.
    pub known_classes: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
}

struct Attempt {
    assignment: Vec<usize>,
    inertia: f64,
    iterations: usize,
}

/// Lloyd's algorithm with known-class centroids seeded from labeled means
/// and labeled rows pinned to their class.
///
/// Novel centroids start from a D²-weighted farthest-point draw over the
/// unlabeled rows. A cluster that empties is re-seeded at the unlabeled row
/// farthest from its centroid; an attempt fails only when no such row is
/// available. Of the successful restarts the lowest inertia wins, then the
/// lowest seed.
pub fn seeded_kmeans(
    z: &DMatrix<f64>,
    labeled: &BTreeMap<usize, Vec<usize>>,
    c_total: usize,
    opt: &KMeansConfig,
    exec: Execution,
) -> Result<KMeansResult> {
    let n = z.nrows();
    let known: Vec<usize> = labeled.keys().copied().collect();
    if known.len() > c_total || c_total == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} labeled classes but {c_total} clusters requested",
            known.len()
        )));
    }
    let mut pinned: Vec<Option<usize>> = vec![None; n];
    for (slot, idx) in labeled.values().enumerate() {
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("labeled class {} has no rows", known[slot])));
        }
        for &i in idx {
            if i >= n {
                return Err(Error::InvalidArgument(format!("labeled index {i} out of range")));
            }
            if pinned[i].is_some_and(|p| p != slot) {
                return Err(Error::InvalidArgument(format!("row {i} labeled twice")));
            }
            pinned[i] = Some(slot);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
    if free.len() < c_total - known.len() {
        return Err(Error::InvalidArgument(format!(
            "{} unlabeled rows cannot seed {} novel clusters",
            free.len(),
            c_total - known.len()
        )));
    }
    let restarts = opt.restarts.max(1);
    let seeds: Vec<u64> = (0..restarts as u64).map(|r| opt.seed.wrapping_add(r)).collect();
    let attempts = exec.map(&seeds, |&seed| {
        lloyd(z, labeled, &pinned, &free, c_total, opt.max_iters, seed).map(|a| (seed, a))
    });
    let best = attempts
        .into_iter()
        .flatten()
        .min_by(|(sa, a), (sb, b)| {
            a.inertia
                .partial_cmp(&b.inertia)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(sa.cmp(sb))
        });
    match best {
        Some((seed, a)) => Ok(KMeansResult {
            assignment: a.assignment,
            known_classes: known,
            inertia: a.inertia,
            iterations: a.iterations,
            seed,
        }),
        None => Err(Error::EmptyCluster { restarts }),
    }
}

fn lloyd(
    z: &DMatrix<f64>,
    labeled: &BTreeMap<usize, Vec<usize>>,
    pinned: &[Option<usize>],
    free: &[usize],
    c_total: usize,
    max_iters: usize,
    seed: u64,
) -> Option<Attempt> {
    let n = z.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = labeled.values().map(|idx| row_mean(z, idx)).collect();
    while centroids.len() < c_total {
        let d2: Vec<f64> = free
            .iter()
            .map(|&i| {
                centroids
                    .iter()
                    .map(|c| sq_dist(z, i, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().filter(|v| v.is_finite()).sum();
        let pick = if centroids.is_empty() {
            free[rng.random_range(0..free.len())]
        } else if total <= 0.0 {
            return None;
        } else {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = free[free.len() - 1];
            for (pos, &i) in free.iter().enumerate() {
                t -= d2[pos];
                if t < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(z.row(pick).iter().copied().collect());
    }

    let nearest = |i: usize, cs: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (c, mu) in cs.iter().enumerate() {
            let d = sq_dist(z, i, mu);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = (0..n)
        .map(|i| pinned[i].unwrap_or_else(|| nearest(i, &centroids)))
        .collect();
    let mut iterations = 0;
    let mut reseeds = 0;
    loop {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c_total];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            reseeds += 1;
            if reseeds > c_total * (max_iters + 1) {
                return None;
            }
            // farthest unlabeled row from its current centroid
            let mut far = None;
            let mut fd = 0.0;
            for &i in free {
                let c = assignment[i];
                if members[c].len() <= 1 {
                    continue;
                }
                let d = sq_dist(z, i, &centroids[c]);
                if d > fd {
                    fd = d;
                    far = Some(i);
                }
            }
            let i = far?;
            assignment[i] = empty;
            centroids[empty] = z.row(i).iter().copied().collect();
            continue;
        }
        for (c, m) in members.iter().enumerate() {
            centroids[c] = row_mean(z, m);
        }
        if iterations >= max_iters {
            break;
        }
        iterations += 1;
        let next: Vec<usize> = (0..n)
            .map(|i| pinned[i].unwrap_or_else(|| nearest(i, &centroids)))
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = (0..n).map(|i| sq_dist(z, i, &centroids[assignment[i]])).sum();
    Some(Attempt { assignment, inertia, iterations })
}

fn relabel(xs: &[usize]) -> (Vec<usize>, usize) {
    let ids: BTreeSet<usize> = xs.iter().copied().collect();
    let map: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (xs.iter().map(|v| map[v]).collect(), ids.len())
}

/// Optimal one-to-one matching of predicted ids to true ids.
///
/// Returns the matched true id for every predicted id present in `pred`
/// (unmatched predicted ids map to `None`).
pub fn hungarian_matching(pred: &[usize], truth: &[usize]) -> Result<BTreeMap<usize, Option<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let p_ids: Vec<usize> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let t_ids: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let (p, cp) = relabel(pred);
    let (t, ct) = relabel(truth);
    let c = cp.max(ct).max(1);
    let mut counts = Matrix::new(c, c, 0_i64);
    for (&a, &b) in p.iter().zip(&t) {
        counts[(a, b)] += 1;
    }
    let (_, assign) = kuhn_munkres(&counts);
    Ok(p_ids
        .iter()
        .enumerate()
        .map(|(pi, &pid)| (pid, t_ids.get(assign[pi]).copied()))
        .collect())
}

/// Fraction of points that agree after the optimal matching.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty assignment".into()));
    }
    let m = hungarian_matching(pred, truth)?;
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| m[p] == Some(**t))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Accuracy split over known and novel classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyReport {
    /// Joint matching over every evaluated point.
    pub accuracy_all: f64,
    /// Known-class points, scored under the joint matching.
    pub accuracy_known: Option<f64>,
    /// Novel-class points, scored under the joint matching.
    pub accuracy_novel: Option<f64>,
    /// Known-class points whose cluster is the one pinned to their class.
    pub accuracy_known_pinned: Option<f64>,
    /// Novel-class points with a matching computed on that subset alone.
    pub accuracy_novel_separate: Option<f64>,
}

pub fn accuracy_report(
    pred: &[usize],
    truth: &[usize],
    result_known: &[usize],
    mask: Option<&[bool]>,
) -> Result<AccuracyReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch("prediction/truth length".into()));
    }
    let keep: Vec<usize> = (0..pred.len())
        .filter(|&i| mask.map_or(true, |m| m[i]))
        .collect();
    let p: Vec<usize> = keep.iter().map(|&i| pred[i]).collect();
    let t: Vec<usize> = keep.iter().map(|&i| truth[i]).collect();
    let matching = hungarian_matching(&p, &t)?;
    let is_known = |c: usize| result_known.contains(&c);
    let frac = |sel: &dyn Fn(usize) -> bool, ok: &dyn Fn(usize) -> bool| -> Option<f64> {
        let idx: Vec<usize> = (0..p.len()).filter(|&i| sel(i)).collect();
        (!idx.is_empty()).then(|| idx.iter().filter(|&&i| ok(i)).count() as f64 / idx.len() as f64)
    };
    let joint_ok = |i: usize| matching[&p[i]] == Some(t[i]);
    let accuracy_all = frac(&|_| true, &joint_ok).unwrap_or(0.0);
    let accuracy_known = frac(&|i| is_known(t[i]), &joint_ok);
    let accuracy_novel = frac(&|i| !is_known(t[i]), &joint_ok);
    let accuracy_known_pinned = frac(&|i| is_known(t[i]), &|i| {
        result_known.get(p[i]).copied() == Some(t[i])
    });
    let novel_idx: Vec<usize> = (0..p.len()).filter(|&i| !is_known(t[i])).collect();
    let accuracy_novel_separate = if novel_idx.is_empty() {
        None
    } else {
        let np: Vec<usize> = novel_idx.iter().map(|&i| p[i]).collect();
        let nt: Vec<usize> = novel_idx.iter().map(|&i| t[i]).collect();
        Some(hungarian_accuracy(&np, &nt)?)
    };
    Ok(AccuracyReport {
        accuracy_all,
        accuracy_known,
        accuracy_novel,
        accuracy_known_pinned,
        accuracy_novel_separate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapsed_clusters() {
        let p = Partition::from_labels(&[0, 0, 1, 1]).unwrap();
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let s = intra_inter(&p, &z).unwrap();
        assert_eq!(s.intra, 0.0);
        assert!(s.inter > 0.0);
        assert_eq!(kmeans_measure(&p, &z).unwrap(), 0.0);
        assert_eq!(error_ratio(&p, &z).unwrap(), ErrorRatio::Undefined);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let p = Partition::from_labels(&[0, 1, 0]).unwrap();
        let z = DMatrix::from_element(3, 2, 0.7);
        assert!(matches!(kmeans_measure(&p, &z), Err(Error::DegenerateInter(_))));
    }

    #[test]
    fn hand_enumerated_error_ratio() {
        // π₁ = {0,1,2} around 0, π₂ = {3,4,5} around 10; point 2 sits near π₂
        // and point 5 near π₁
        let p = Partition::from_labels(&[0, 0, 0, 1, 1, 1]).unwrap();
        let z = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 8.0, 10.0, 9.0, 2.0]);
        // means 3 and 7
        let xi = misassigned_counts(&p, &z).unwrap();
        assert_eq!(xi[0][1], 1);
        assert_eq!(xi[1][0], 1);
        assert_eq!(error_ratio(&p, &z).unwrap(), ErrorRatio::Defined(1.0 / 6.0));
    }

    #[test]
    fn boundary_points_count_as_errors() {
        let p = Partition::from_labels(&[0, 0, 1, 1]).unwrap();
        // means -1 and 1, point 1 at 0 is equidistant
        let z = DMatrix::from_column_slice(4, 1, &[-2.0, 0.0, 1.0, 1.0]);
        assert_eq!(misassigned_counts(&p, &z).unwrap()[0][1], 1);
    }

    #[test]
    fn hungarian_known_cases() {
        assert_eq!(hungarian_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(hungarian_accuracy(&[2, 0, 1, 1], &[0, 1, 2, 2]).unwrap(), 1.0);
        let acc = hungarian_accuracy(&[0, 0, 1, 1, 2, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
        let acc = hungarian_accuracy(&[0, 0, 1, 2, 2, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unequal_cluster_counts() {
        // more predicted clusters than classes: one cluster stays unmatched
        let acc = hungarian_accuracy(&[0, 1, 2, 2], &[0, 0, 1, 1]).unwrap();
        assert!((acc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn partition_rejects_overlap() {
        assert!(Partition::from_blocks(vec![vec![0, 1], vec![1]]).is_err());
        assert!(Partition::from_blocks(vec![vec![0], vec![]]).is_err());
    }
}
