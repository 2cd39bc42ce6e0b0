//! Dense helpers: `svec`/`smat` conversion, Cholesky with dynamic
//! regularization, and symmetric eigenvalues.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch, LltRegularization};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatMut, MatRef, Par, Side};

use super::SdpError;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// `n(n+1)/2`
pub const fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)` (either order) inside `svec` of an `n x n` matrix.
pub const fn svec_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// Inverse of [`svec_index`]: the `(i, j)` pair with `i <= j` at position `k`.
pub fn svec_pair(k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    let mut start = 0;
    while start + (n - i) <= k {
        start += n - i;
        i += 1;
    }
    (i, i + k - start)
}

pub fn svec(m: MatRef<'_, f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for i in 0..n {
        out.push(m[(i, i)]);
        for j in i + 1..n {
            out.push(SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> Mat<f64> {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        m[(i, i)] = v[k];
        k += 1;
        for j in i + 1..n {
            let x = v[k] / SQRT2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: MatRef<'_, f64>) -> Result<f64, SdpError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(SdpError::InvalidProblem(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let mut asym = 0.0f64;
    let mut scale = 1.0f64;
    for j in 0..n {
        for i in 0..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            scale = scale.max(m[(i, j)].abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(SdpError::NotSymmetric(asym));
    }
    Ok(sym_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min))
}

/// Eigenvalues (ascending) of the symmetric matrix read from its lower triangle.
pub fn sym_eigenvalues(m: MatRef<'_, f64>) -> Vec<f64> {
    match m.self_adjoint_eigenvalues(Side::Lower) {
        Ok(v) => v,
        Err(_) => vec![f64::NAN; m.nrows()],
    }
}

/// In-place lower Cholesky factor with dynamic regularization relative to the
/// largest diagonal entry. Returns the number of regularized pivots, or
/// `None` when the matrix is not usable (non-finite or zero).
pub fn cholesky_regularized(mut a: MatMut<'_, f64>, rel_eps: f64, rel_delta: f64) -> Option<usize> {
    let n = a.nrows();
    if n == 0 {
        return Some(0);
    }
    let mut scale = 0.0f64;
    for i in 0..n {
        let d = a[(i, i)];
        if !d.is_finite() {
            return None;
        }
        scale = scale.max(d.abs());
    }
    if scale == 0.0 {
        scale = 1.0;
    }
    let reg = LltRegularization {
        dynamic_regularization_delta: rel_delta * scale,
        dynamic_regularization_epsilon: rel_eps * scale,
    };
    let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, Par::Seq, Default::default()));
    match cholesky_in_place(a.as_mut(), reg, Par::Seq, MemStack::new(&mut mem), Default::default()) {
        Ok(info) => {
            for i in 0..n {
                if !a[(i, i)].is_finite() {
                    return None;
                }
            }
            Some(info.dynamic_regularization_count)
        }
        Err(_) => None,
    }
}

/// Plain Cholesky (no regularization); `None` if not positive definite.
pub fn cholesky_strict(m: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let llt = m.llt(Side::Lower).ok()?;
    let l = llt.L().to_owned();
    if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
        return None;
    }
    Some(l)
}

/// Solves `L L' x = rhs` in place given the lower factor `L`.
pub fn chol_solve_in_place(l: MatRef<'_, f64>, mut rhs: MatMut<'_, f64>) {
    solve_lower_triangular_in_place(l, rhs.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(l.transpose(), rhs, Par::Seq);
}

pub fn chol_solve_vec(l: MatRef<'_, f64>, v: &mut [f64]) {
    let n = v.len();
    let mut m = MatMut::from_column_major_slice_mut(v, n, 1);
    solve_lower_triangular_in_place(l, m.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(l.transpose(), m, Par::Seq);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_roundtrip_and_inner_product() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64 + if i == j { 1.0 } else { 0.5 });
        let b = Mat::from_fn(3, 3, |i, j| (i * j) as f64 - 1.0);
        let va = svec(a.as_ref());
        let vb = svec(b.as_ref());
        let trace: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| a[(i, j)] * b[(j, i)]).sum();
        assert!((dot(&va, &vb) - trace).abs() < 1e-12);
        let back = smat(&va, 3);
        assert!((0..3).all(|i| (0..3).all(|j| (back[(i, j)] - a[(i, j)]).abs() < 1e-14)));
    }

    #[test]
    fn svec_index_layout() {
        let n = 4;
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(svec_index(i, j, n), k);
                assert_eq!(svec_index(j, i, n), k);
                assert_eq!(svec_pair(k, n), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn min_eigenvalue_examples() {
        let id = Mat::<f64>::identity(3, 3);
        assert!((min_eigenvalue(id.as_ref()).unwrap() - 1.0).abs() < 1e-14);
        let mut d = Mat::<f64>::zeros(2, 2);
        d[(0, 0)] = 3.0;
        d[(1, 1)] = -2.0;
        assert!((min_eigenvalue(d.as_ref()).unwrap() + 2.0).abs() < 1e-14);
        let mut ns = Mat::<f64>::identity(2, 2);
        ns[(0, 1)] = 1e-9;
        assert!(matches!(min_eigenvalue(ns.as_ref()), Err(SdpError::NotSymmetric(_))));
    }

    #[test]
    fn gram_matrix_is_psd() {
        let b = Mat::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let g = b.transpose() * &b;
        assert!(min_eigenvalue(g.as_ref()).unwrap() >= -1e-12);
    }
}
