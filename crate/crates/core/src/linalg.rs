//! Dense symmetric linear algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Full eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending algebraic order. Each eigenvector is
/// flipped so that its largest-magnitude coordinate is positive; among
/// coordinates tied in magnitude the lowest index wins.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    /// Eigenvectors stored as columns, in the same order as `values`.
    pub vectors: DMatrix<f64>,
}

const SIGN_TIE_TOL: f64 = 1e-12;

impl Spectrum {
    pub fn of(a: &DMatrix<f64>) -> Spectrum {
        let n = a.nrows();
        let sym = symmetrize(a);
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            fix_sign(&mut col);
            vectors.set_column(dst, &col);
        }
        Spectrum { values, vectors }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Flip `v` so its largest-|entry| coordinate (lowest index on ties) is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max - SIGN_TIE_TOL * max)
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// `diag(d) · a · diag(d)`.
pub fn scale_sym(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| d[i] * a[(i, j)] * d[j])
}

/// Orthonormal basis for the column space of `a` (assumed full column rank).
pub fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Frobenius norm of sin Θ between the column spaces of `u` and `w`.
///
/// Both inputs are orthonormalized first, so unnormalized spanning sets are fine.
pub fn sin_theta_distance(u: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let qu = orthonormal_basis(u);
    let qw = orthonormal_basis(w);
    (&qw - &qu * qu.tr_mul(&qw)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_sorted_descending_with_positive_pivot() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        let s = Spectrum::of(&a);
        assert!((s.values[0] - 3.0).abs() < 1e-12);
        assert!((s.values[1] - 1.0).abs() < 1e-12);
        assert!((s.values[2] + 1.0).abs() < 1e-12);
        for j in 0..3 {
            let col = s.vectors.column(j);
            let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let pivot = col.iter().position(|x| x.abs() >= max - 1e-12).unwrap();
            assert!(col[pivot] > 0.0);
        }
        // tie between coordinates 0 and 1 of the top eigenvector: index 0 wins
        assert!(s.vectors[(0, 0)] > 0.0);
    }

    #[test]
    fn sin_distance_of_same_space_is_zero() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let w = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 3.0, 2.0, 2.0, 2.0]);
        assert!(sin_theta_distance(&u, &w) < 1e-7);
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!((sin_theta_distance(&e1, &e2) - 1.0).abs() < 1e-12);
    }
}
