//! Primal-dual interior-point solver for small dense conic problems.
//!
//! Standard form:
//!
//! ```text
//! minimize    c' z
//! subject to  A z = b,   z in K = Free^p x R_+^q x S_+^{n_1} x ...
//! ```
//!
//! The dual is `max b'y  s.t.  c - A'y = s,  s in K*` with `s = 0` on free
//! blocks. Symmetric-matrix blocks are stored in `svec` layout: the upper
//! triangle enumerated row by row (`(0,0), (0,1), .., (0,n-1), (1,1), ..`)
//! with off-diagonal entries multiplied by `sqrt(2)`, so that the Euclidean
//! inner product of two `svec` vectors equals the trace inner product of the
//! matrices.
//!
//! The algorithm is a homogeneous self-dual embedding with Nesterov-Todd
//! scaling and Mehrotra predictor-corrector steps. Each Newton system is
//! reduced to normal equations; rows that share no conic block decouple, so
//! the Schur complement is factored block-by-block and free variables are
//! eliminated through a second, dense Schur complement.

mod cones;
mod dump;
mod ipm;
mod kkt;
pub mod linalg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dump::{read_dump, write_dump};
pub use linalg::{min_eigenvalue, smat, svec, svec_index, svec_len};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dump format error on line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One block of the cone `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// `n x n` positive semidefinite matrices, `n(n+1)/2` scalar variables.
    Psd(usize),
}

impl Cone {
    /// Number of scalar variables in the block.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Nonneg(n) => n,
            Cone::Psd(n) => svec_len(n),
        }
    }

    /// Barrier degree (free blocks contribute nothing).
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Free(_) => 0,
            Cone::Nonneg(n) | Cone::Psd(n) => n,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self { nrows, ncols, row_ptr, col_idx, values };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.nrows) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `out = A' y`
    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &yr) in y.iter().enumerate().take(self.nrows) {
            if yr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
    }
}

/// `min c'z  s.t.  A z = b,  z in K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub cones: Vec<Cone>,
    pub c: Vec<f64>,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.cones.iter().map(Cone::dim).sum()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    /// Offset of each block's first variable.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.cones
            .iter()
            .map(|c| {
                let o = acc;
                acc += c.dim();
                o
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.num_vars();
        if self.cones.iter().any(|c| c.dim() == 0) {
            return Err(SdpError::InvalidProblem("empty cone block".into()));
        }
        if self.c.len() != n || self.a.ncols != n {
            return Err(SdpError::InvalidProblem(format!(
                "variable count mismatch: cones {n}, c {}, A cols {}",
                self.c.len(),
                self.a.ncols
            )));
        }
        if self.a.nrows != self.b.len() {
            return Err(SdpError::InvalidProblem(format!(
                "row count mismatch: A rows {}, b {}",
                self.a.nrows,
                self.b.len()
            )));
        }
        if self.c.iter().chain(&self.b).chain(&self.a.values).any(|v| !v.is_finite()) {
            return Err(SdpError::InvalidProblem("non-finite data".into()));
        }
        Ok(())
    }

    /// `max_i |(A z - b)_i|`
    pub fn equality_residual(&self, z: &[f64]) -> f64 {
        let mut az = vec![0.0; self.num_rows()];
        self.a.mul_vec(z, &mut az);
        az.iter().zip(&self.b).fold(0.0, |m, (l, r)| m.max((l - r).abs()))
    }

    /// The slice of `z` belonging to block `k`.
    pub fn block<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let off = self.offsets()[k];
        &z[off..off + self.cones[k].dim()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub tol_infeas: f64,
    pub max_iter: usize,
    /// Print one line per iteration to stderr.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_gap: 1e-8, tol_feas: 1e-8, tol_infeas: 1e-8, max_iter: 200, verbose: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    /// Farkas ray `y` with `-A'y in K*` (zero on free blocks) and `b'y = 1`.
    PrimalInfeasible {
        ray: Vec<f64>,
    },
    /// Ray `z in K` with `A z = 0` and `c'z = -1`.
    DualInfeasible {
        ray: Vec<f64>,
    },
    /// Iteration limit or numerical breakdown; the most accurate iterate is
    /// returned.
    MaxIter {
        reason: String,
    },
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::PrimalInfeasible { .. } => "primal_infeasible",
            Status::DualInfeasible { .. } => "dual_infeasible",
            Status::MaxIter { .. } => "max_iter",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `||A z - b|| / (1 + ||b||)`
    pub primal: f64,
    /// `||A'y + s - c|| / (1 + ||c||)`
    pub dual: f64,
    /// `|c'z - b'y| / (1 + |c'z|)`
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    /// Primal point (divided by the embedding variable tau).
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// Solves `problem`; see the module documentation for the formulation.
pub fn solve(problem: &ConicProblem, options: &SolverOptions) -> Result<Solution, SdpError> {
    problem.validate()?;
    Ok(ipm::run(problem, options))
}
