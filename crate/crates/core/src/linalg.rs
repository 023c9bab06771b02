//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// LU factorization with partial pivoting of a row-major `p x p` matrix.
#[derive(Debug, Clone)]
pub(crate) struct Lu {
    p: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot falls below `tol` times the largest entry.
    pub(crate) fn factor(mut a: Vec<f64>, p: usize, tol: f64) -> Option<Lu> {
        debug_assert_eq!(a.len(), p * p);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return None;
        }
        let mut perm: Vec<usize> = (0..p).collect();
        for c in 0..p {
            let (piv, best) = (c..p)
                .map(|r| (r, a[r * p + c].abs()))
                .fold((c, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            if best <= tol * scale {
                return None;
            }
            if piv != c {
                for j in 0..p {
                    a.swap(c * p + j, piv * p + j);
                }
                perm.swap(c, piv);
            }
            let d = a[c * p + c];
            for r in (c + 1)..p {
                let f = a[r * p + c] / d;
                a[r * p + c] = f;
                if f != 0.0 {
                    for j in (c + 1)..p {
                        a[r * p + j] -= f * a[c * p + j];
                    }
                }
            }
        }
        Some(Lu { p, lu: a, perm })
    }

    /// Solves `A v = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut v: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for r in 0..p {
            let mut s = v[r];
            for j in 0..r {
                s -= self.lu[r * p + j] * v[j];
            }
            v[r] = s;
        }
        for r in (0..p).rev() {
            let mut s = v[r];
            for j in (r + 1)..p {
                s -= self.lu[r * p + j] * v[j];
            }
            v[r] = s / self.lu[r * p + r];
        }
        v
    }

    /// Solves `A^T v = b`.
    pub(crate) fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        // A = P^T L U, so A^T = U^T L^T P.
        let mut w = b.to_vec();
        for r in 0..p {
            let mut s = w[r];
            for j in 0..r {
                s -= self.lu[j * p + r] * w[j];
            }
            w[r] = s / self.lu[r * p + r];
        }
        for r in (0..p).rev() {
            let mut s = w[r];
            for j in (r + 1)..p {
                s -= self.lu[j * p + r] * w[j];
            }
            w[r] = s;
        }
        let mut v = vec![0.0; p];
        for (k, &i) in self.perm.iter().enumerate() {
            v[i] = w[k];
        }
        v
    }
}

/// Principal sub-matrix with rows and columns `idx`.
pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

pub fn subvector(v: &[f64], idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let n = m.nrows();
    (0..n).all(|r| (0..r).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= tol * scale))
}

/// Eigenvalues of a symmetric matrix, ascending, with matching eigenvectors
/// as columns.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = m.nrows();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Symmetric square root and inverse square root of an SPD matrix.
/// Returns `None` unless every eigenvalue exceeds `rel_tol * max`.
pub fn sym_sqrt_pair(m: &DMatrix<f64>, rel_tol: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let (values, vectors) = sorted_eigen(m);
    let max = values.last().copied().unwrap_or(0.0);
    if !(max > 0.0) || values[0] <= rel_tol * max {
        return None;
    }
    let sqrt = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| v.sqrt())));
    let inv_sqrt =
        DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v.sqrt())));
    let half = &vectors * sqrt * vectors.transpose();
    let neg_half = &vectors * inv_sqrt * vectors.transpose();
    Some((symmetrize(&half), symmetrize(&neg_half)))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_both_ways() {
        let a = vec![2.0, 1.0, 0.5, -1.0, 3.0, 2.0, 0.0, 1.0, 4.0];
        let lu = Lu::factor(a.clone(), 3, 1e-14).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = lu.solve(&b);
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((s - b[r]).abs() < 1e-12);
        }
        let y = lu.solve_transpose(&b);
        for c in 0..3 {
            let s: f64 = (0..3).map(|r| a[r * 3 + c] * y[r]).sum();
            assert!((s - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_detects_singular() {
        assert!(Lu::factor(vec![1.0, 2.0, 2.0, 4.0], 2, 1e-12).is_none());
    }

    #[test]
    fn sqrt_pair_inverts() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1875, 0.0625, 0.0625, 0.1875]);
        let (h, nh) = sym_sqrt_pair(&m, 1e-12).unwrap();
        assert!((&h * &h - &m).norm() < 1e-14);
        assert!((&h * &nh - DMatrix::identity(2, 2)).norm() < 1e-13);
    }
}
