//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Replace `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending
/// order; column `k` of the returned matrix is the eigenvector of value `k`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vecs)
}

/// Symmetric square root of a positive semidefinite matrix.  Eigenvalues
/// down to `-tol·λ_max` are treated as zero; anything more negative fails.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &l) in vals.iter().enumerate() {
        if l < -tol * scale {
            return Err(Error::FactorizationFailure(format!(
                "matrix has negative eigenvalue {l:e}"
            )));
        }
        d[(k, k)] = l.max(0.0).sqrt();
    }
    Ok(&vecs * d * vecs.transpose())
}

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = vals.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve the algebraic Lyapunov equation `A X + X Aᵀ + Q = 0` via the
/// Kronecker form `(I⊗A + A⊗I) vec X = -vec Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch("Lyapunov operands must be n×n".into()));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("Lyapunov operator is singular".into()))?;
    let mut out = DMatrix::from_column_slice(n, n, x.as_slice());
    symmetrize(&mut out);
    Ok(out)
}

/// Frobenius product `Σ_ij a_ij b_ij`.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Orthonormal basis of the orthogonal complement of the unit vector `n`,
/// returned as the columns of an `dim × (dim-1)` matrix.
pub fn complement_basis(n: &DVector<f64>) -> DMatrix<f64> {
    let dim = n.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim - 1);
    // Feed the standard basis in order of increasing overlap with n so the
    // most transverse directions are used first.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()));
    for &k in &order {
        if cols.len() == dim - 1 {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        v -= n * n.dot(&v);
        for c in &cols {
            v -= c * c.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    let mut out = DMatrix::zeros(dim, dim - 1);
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 2.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_3x3() {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.3, -0.5, -1.0, 0.2, 0.1, 0.4, -3.0]);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 3.0]);
        let x = solve_lyapunov(&a, &q).unwrap();
        let r = &a * &x + &x * a.transpose() + &q;
        assert!(max_abs(&r) < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = psd_sqrt(&m, 1e-12).unwrap();
        assert!(max_abs(&(&s * &s - &m)) < 1e-13);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&singular, 1e-12).unwrap();
        assert!(max_abs(&(&s * &s - &singular)) < 1e-13);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_sqrt(&indefinite, 1e-12).is_err());
    }

    #[test]
    fn eigen_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (v, q) = sym_eigen(&m);
        assert!((v[0] + 1.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
        let r = &m * q.column(0) - q.column(0) * v[0];
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn complement_is_orthonormal() {
        let n = DVector::from_vec(vec![0.3, -0.4, 0.5, 0.1]).normalize();
        let u = complement_basis(&n);
        let g = u.transpose() * &u;
        assert!(max_abs(&(g - DMatrix::identity(3, 3))) < 1e-14);
        assert!((u.transpose() * &n).norm() < 1e-14);
    }
}
