//! Per-block Nesterov-Todd scaling for the nonnegative orthant and the PSD
//! cone.
//!
//! For a PSD block with `X = Lx Lx'`, `S = Ls Ls'` and `Ls' Lx = U diag(l) V'`,
//! the scaling `G = Lx V diag(l)^{-1/2}` satisfies `G^{-1} X G^{-T} = G' S G =
//! diag(l)`, and `W = G G'` is the NT point (`W S W = X`). Newton directions
//! satisfy `dX + W dS W = R`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};

use super::linalg::{cholesky_strict, smat, svec, sym_eigenvalues};
use super::Cone;

#[derive(Clone, Copy, Debug)]
pub(super) enum Kind {
    Nonneg,
    Psd,
}

#[derive(Clone, Copy, Debug)]
pub(super) struct ConeBlock {
    pub kind: Kind,
    /// Matrix order for PSD, length for nonneg.
    pub n: usize,
    pub offset: usize,
    pub dim: usize,
}

pub(super) enum BlockScaling {
    Nonneg { w2: Vec<f64>, lambda: Vec<f64> },
    Psd { g: Mat<f64>, ginv: Mat<f64>, w: Mat<f64>, lambda: Vec<f64> },
}

/// The non-free part of the cone and the free variable map.
pub(super) struct ConeSet {
    pub blocks: Vec<ConeBlock>,
    /// Global indices of free variables, in order.
    pub free: Vec<usize>,
    pub n_vars: usize,
    pub degree: usize,
}

impl ConeSet {
    pub fn new(cones: &[Cone]) -> Self {
        let mut blocks = Vec::new();
        let mut free = Vec::new();
        let mut offset = 0;
        let mut degree = 0;
        for cone in cones {
            let dim = cone.dim();
            match *cone {
                Cone::Free(n) => free.extend(offset..offset + n),
                Cone::Nonneg(n) => blocks.push(ConeBlock { kind: Kind::Nonneg, n, offset, dim }),
                Cone::Psd(n) => blocks.push(ConeBlock { kind: Kind::Psd, n, offset, dim }),
            }
            degree += cone.degree();
            offset += dim;
        }
        Self { blocks, free, n_vars: offset, degree }
    }

    /// Writes the identity element of each block into `v` (free entries untouched).
    pub fn set_identity(&self, v: &mut [f64]) {
        for b in &self.blocks {
            let part = &mut v[b.offset..b.offset + b.dim];
            match b.kind {
                Kind::Nonneg => part.fill(1.0),
                Kind::Psd => {
                    part.fill(0.0);
                    let mut k = 0;
                    for i in 0..b.n {
                        part[k] = 1.0;
                        k += b.n - i;
                    }
                }
            }
        }
    }

    /// `sum over blocks of <x, s>`
    pub fn conic_dot(&self, x: &[f64], s: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| super::linalg::dot(&x[b.offset..b.offset + b.dim], &s[b.offset..b.offset + b.dim]))
            .sum()
    }

    pub fn scalings(&self, x: &[f64], s: &[f64]) -> Result<Vec<BlockScaling>, String> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| scaling(b, x, s).ok_or_else(|| format!("cone block {k} left the interior")))
            .collect()
    }

    /// `out = H v` on conic blocks, zero on free entries.
    pub fn apply_h(&self, sc: &[BlockScaling], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (b, s) in self.blocks.iter().zip(sc) {
            let vin = &v[b.offset..b.offset + b.dim];
            let o = &mut out[b.offset..b.offset + b.dim];
            match s {
                BlockScaling::Nonneg { w2, .. } => {
                    for i in 0..b.dim {
                        o[i] = w2[i] * vin[i];
                    }
                }
                BlockScaling::Psd { w, .. } => {
                    let m = smat(vin, b.n);
                    let t = congruence(w, &m);
                    o.copy_from_slice(&svec(t.as_ref()));
                }
            }
        }
    }

    /// Right-hand side `R` of `dx + H ds = R` targeting `sigma_mu` with the
    /// optional second-order term from an affine direction.
    pub fn comp_rhs(
        &self,
        sc: &[BlockScaling],
        x: &[f64],
        sigma_mu: f64,
        affine: Option<(&[f64], &[f64])>,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        for (b, s) in self.blocks.iter().zip(sc) {
            let r = b.offset..b.offset + b.dim;
            match s {
                BlockScaling::Nonneg { lambda, .. } => {
                    for i in 0..b.dim {
                        let g = b.offset + i;
                        let second = affine.map_or(0.0, |(dx, ds)| dx[g] * ds[g]);
                        // (sigma_mu - x s - dx ds) / s with s = lambda^2 / x
                        out[g] = (sigma_mu - lambda[i] * lambda[i] - second) * x[g] / (lambda[i] * lambda[i]);
                    }
                }
                BlockScaling::Psd { g, ginv, lambda, .. } => {
                    let n = b.n;
                    let mut rt = Mat::<f64>::zeros(n, n);
                    for i in 0..n {
                        rt[(i, i)] = sigma_mu - lambda[i] * lambda[i];
                    }
                    if let Some((dx, ds)) = affine {
                        let dxt = congruence(ginv, &smat(&dx[r.clone()], n));
                        let dst = congruence_t(g, &smat(&ds[r.clone()], n));
                        let p = &dxt * &dst;
                        for j in 0..n {
                            for i in 0..n {
                                rt[(i, j)] -= 0.5 * (p[(i, j)] + p[(j, i)]);
                            }
                        }
                    }
                    let z = Mat::from_fn(n, n, |i, j| 2.0 * rt[(i, j)] / (lambda[i] + lambda[j]));
                    let rk = congruence(g, &z);
                    out[r].copy_from_slice(&svec(rk.as_ref()));
                }
            }
        }
    }

    /// Largest `alpha` with `x + alpha dx` and `s + alpha ds` in the cone
    /// (infinite if unbounded).
    pub fn max_step(&self, sc: &[BlockScaling], dx: &[f64], ds: &[f64], x: &[f64], s: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for (b, scal) in self.blocks.iter().zip(sc) {
            let r = b.offset..b.offset + b.dim;
            match scal {
                BlockScaling::Nonneg { .. } => {
                    for g in r {
                        if dx[g] < 0.0 {
                            alpha = alpha.min(-x[g] / dx[g]);
                        }
                        if ds[g] < 0.0 {
                            alpha = alpha.min(-s[g] / ds[g]);
                        }
                    }
                }
                BlockScaling::Psd { g, ginv, lambda, .. } => {
                    let n = b.n;
                    let dxt = congruence(ginv, &smat(&dx[r.clone()], n));
                    let dst = congruence_t(g, &smat(&ds[r], n));
                    for m in [dxt, dst] {
                        let scaled = Mat::from_fn(n, n, |i, j| m[(i, j)] / (lambda[i] * lambda[j]).sqrt());
                        let e = sym_eigenvalues(scaled.as_ref()).into_iter().fold(f64::INFINITY, f64::min);
                        if e.is_nan() {
                            return 0.0;
                        }
                        if e < 0.0 {
                            alpha = alpha.min(-1.0 / e);
                        }
                    }
                }
            }
        }
        alpha
    }
}

fn scaling(b: &ConeBlock, x: &[f64], s: &[f64]) -> Option<BlockScaling> {
    let xs = &x[b.offset..b.offset + b.dim];
    let ss = &s[b.offset..b.offset + b.dim];
    match b.kind {
        Kind::Nonneg => {
            if xs.iter().chain(ss).any(|v| !(*v > 0.0) || !v.is_finite()) {
                return None;
            }
            Some(BlockScaling::Nonneg {
                w2: xs.iter().zip(ss).map(|(a, c)| a / c).collect(),
                lambda: xs.iter().zip(ss).map(|(a, c)| (a * c).sqrt()).collect(),
            })
        }
        Kind::Psd => {
            let n = b.n;
            let lx = cholesky_strict(smat(xs, n).as_ref())?;
            let ls = cholesky_strict(smat(ss, n).as_ref())?;
            let c = ls.transpose() * &lx;
            let svd = c.svd().ok()?;
            let sv: Vec<f64> = (0..n).map(|i| svd.S()[i]).collect();
            if sv.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return None;
            }
            let mut g = &lx * svd.V();
            let mut ginv = svd.U().transpose() * ls.transpose();
            for (j, &l) in sv.iter().enumerate() {
                let f = l.sqrt();
                for i in 0..n {
                    g[(i, j)] /= f;
                    ginv[(j, i)] /= f;
                }
            }
            let w = &g * g.transpose();
            let w = Mat::from_fn(n, n, |i, j| 0.5 * (w[(i, j)] + w[(j, i)]));
            Some(BlockScaling::Psd { g, ginv, w, lambda: sv })
        }
    }
}

/// `a m a'`
pub(super) fn congruence(a: &Mat<f64>, m: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let mut t = Mat::<f64>::zeros(n, m.ncols());
    matmul(t.as_mut(), Accum::Replace, a.as_ref(), m.as_ref(), 1.0, Par::Seq);
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, t.as_ref(), a.transpose(), 1.0, Par::Seq);
    out
}

/// `a' m a`
fn congruence_t(a: &Mat<f64>, m: &Mat<f64>) -> Mat<f64> {
    let n = a.ncols();
    let mut t = Mat::<f64>::zeros(n, m.ncols());
    matmul(t.as_mut(), Accum::Replace, a.transpose(), m.as_ref(), 1.0, Par::Seq);
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, t.as_ref(), a.as_ref(), 1.0, Par::Seq);
    out
}
