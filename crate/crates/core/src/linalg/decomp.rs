//! Matrix factorizations.
//!
//! Cholesky is hand-written and drives every log-determinant in training.
//! SVD and symmetric eigendecomposition come from nalgebra and are used for
//! diagnostics and as independent cross-checks of the Cholesky route.

use crate::error::{NmceError, Result};
use crate::linalg::Matrix;

/// Diagonal jitter added on the single Cholesky retry.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NmceError::ShapeMismatch {
            op: "cholesky",
            left: a.shape(),
            right: (n, n),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NmceError::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Cholesky with one retry after adding [`CHOLESKY_JITTER`]·I.
pub fn cholesky_with_jitter(a: &Matrix) -> Result<Matrix> {
    match cholesky(a) {
        Ok(l) => Ok(l),
        Err(NmceError::NotPositiveDefinite { .. }) if a.is_finite() => {
            let mut jittered = a.clone();
            for i in 0..a.rows() {
                let v = jittered.get(i, i) + CHOLESKY_JITTER;
                jittered.set(i, i, v);
            }
            cholesky(&jittered)
        }
        Err(e) => Err(e),
    }
}

/// `2·Σ ln L_ii` for a Cholesky factor `L`.
pub fn logdet_from_cholesky(l: &Matrix) -> f64 {
    (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>() * 2.0
}

/// Inverse of `L·Lᵀ`, returned exactly symmetric.
pub fn inverse_from_cholesky(l: &Matrix) -> Matrix {
    let n = l.rows();
    // L⁻¹ by forward substitution, column by column.
    let mut linv = Matrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l.get(i, k) * linv.get(k, c);
            }
            linv.set(i, c, s / l.get(i, i));
        }
    }
    // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv.get(k, i) * linv.get(k, j);
            }
            inv.set(i, j, s);
            inv.set(j, i, s);
        }
    }
    inv
}

/// Log-determinant of an SPD matrix via Cholesky.
pub fn logdet_spd(a: &Matrix) -> Result<f64> {
    let l = cholesky_with_jitter(a)?;
    Ok(logdet_from_cholesky(&l))
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let svd = a.to_nalgebra().svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Thin SVD: singular values (descending) with the matching right singular
/// vectors as rows of the returned matrix.
pub fn svd_right(a: &Matrix) -> (Vec<f64>, Matrix) {
    let svd = a.to_nalgebra().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = Matrix::from_fn(order.len(), a.cols(), |r, c| vt[(order[r], c)]);
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let eig = a.to_nalgebra().symmetric_eigen();
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}
