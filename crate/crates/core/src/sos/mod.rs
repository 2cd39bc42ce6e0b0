//! Putinar-type positivity constraints lowered to conic form.
//!
//! A constraint `target >= 0 on {g_i >= 0}` becomes the identity
//! `target = s_0 + sum_i s_i g_i` where every `s = b' G b` has a Gram matrix
//! `G` in its own PSD block. Identities are matched coefficientwise over
//! `monomial_basis(space, 2d)`. Decision polynomials live in one free block
//! that comes first in the variable vector; PSD blocks follow in creation
//! order, each in `svec` layout.

mod affine;
mod moments;

use std::collections::HashMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use affine::AffinePoly;
pub use moments::{box_moment, lebesgue_moments, LebesgueMomentVector};

use crate::model::Inequality;
use crate::oracle::uniform_point;
use crate::poly::{monomial_basis, Monomial, PolyError, Polynomial, VarSpace};
use crate::sdp::{min_eigenvalue, smat, svec_index, svec_len, Cone, ConicProblem, SparseMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error("{constraint}: degree {degree} exceeds the budget {budget}")]
    DegreeBudget { constraint: String, degree: u32, budget: u32 },
    #[error("{constraint}: expected polynomials over {expected}, got {got}")]
    SpaceMismatch { constraint: String, expected: VarSpace, got: VarSpace },
    #[error("moments need a finite box")]
    UnboundedBox,
    #[error("{constraint}: coefficient of {monomial:?} cannot be matched")]
    UnmatchedRow { constraint: String, monomial: Vec<u32> },
    #[error("assignment has {got} entries, the problem has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

pub type Result<T> = std::result::Result<T, SosError>;

/// Default equality tolerance of [`SosProgram::verify`].
pub const TOL_EQ: f64 = 1e-6;
/// Default eigenvalue tolerance of [`SosProgram::verify`].
pub const TOL_PSD: f64 = 1e-7;

/// A polynomial with unknown coefficients in the free block.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionPoly {
    pub name: String,
    pub space: VarSpace,
    pub degree: u32,
    pub basis: Vec<Monomial>,
    /// First coefficient index in the free block.
    pub offset: usize,
}

impl DecisionPoly {
    pub fn affine(&self) -> AffinePoly {
        AffinePoly::decision(self.space, self.offset, &self.basis)
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.basis.len()
    }

    /// Reads the polynomial from an assignment of the whole variable vector.
    pub fn extract(&self, z: &[f64]) -> Polynomial {
        Polynomial::from_terms(self.space, self.basis.iter().cloned().zip(z[self.range()].iter().copied()))
    }
}

/// The set a constraint must hold on, in the constraint's own space.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub space: VarSpace,
    pub inequalities: Vec<Inequality>,
    /// A box containing the set, one interval per variable (time included).
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.inequalities.iter().all(|g| g.poly.evaluate(x).is_ok_and(|v| v >= 0.0))
    }
}

/// An SOS multiplier `b' G b` attached to `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multiplier {
    pub label: String,
    pub g: Polynomial,
    pub basis: Vec<Monomial>,
    /// Index among the PSD blocks.
    pub block: usize,
}

impl Multiplier {
    pub fn degree(&self) -> u32 {
        2 * self.basis.iter().map(Monomial::degree).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PutinarConstraint {
    pub name: String,
    pub target: AffinePoly,
    pub domain: Domain,
    pub multipliers: Vec<Multiplier>,
    pub order: u32,
}

struct PendingRow {
    constraint: usize,
    monomial: Monomial,
    free: Vec<(usize, f64)>,
    psd: Vec<(usize, usize, f64)>,
    rhs: f64,
}

/// Collects decision polynomials and constraints, then assembles the conic problem.
#[derive(Default)]
pub struct SosProgramBuilder {
    n_free: usize,
    polys: Vec<DecisionPoly>,
    psd: Vec<usize>,
    constraints: Vec<PutinarConstraint>,
    rows: Vec<PendingRow>,
    objective: Vec<(usize, f64)>,
    trace_weight: f64,
}

/// Multiplier degree for `g` under the budget `2d`.
pub fn multiplier_degree(order: u32, g_degree: u32) -> u32 {
    2 * ((2 * order - g_degree) / 2)
}

impl SosProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_poly(&mut self, name: impl Into<String>, space: VarSpace, degree: u32) -> DecisionPoly {
        let basis = monomial_basis(space, degree);
        let p = DecisionPoly { name: name.into(), space, degree, offset: self.n_free, basis };
        self.n_free += p.basis.len();
        self.polys.push(p.clone());
        p
    }

    /// Adds `weights . coefficients(p)` to the minimized objective.
    pub fn add_objective(&mut self, p: &DecisionPoly, weights: &[f64]) {
        for (j, w) in weights.iter().enumerate().take(p.basis.len()) {
            if *w != 0.0 {
                self.objective.push((p.offset + j, *w));
            }
        }
    }

    /// Adds `weight * trace` of every Gram matrix to the objective, which
    /// keeps the optimal set bounded when the polynomial objective alone
    /// leaves directions free.
    pub fn set_trace_weight(&mut self, weight: f64) {
        self.trace_weight = weight;
    }

    fn new_block(&mut self, size: usize) -> usize {
        self.psd.push(size);
        self.psd.len() - 1
    }

    /// `target >= 0` on `domain` (and where `time_multiplier >= 0`), certified
    /// with multipliers of total degree at most `2 * order`.
    pub fn putinar(
        &mut self,
        name: impl Into<String>,
        target: AffinePoly,
        domain: Domain,
        time_multiplier: Option<Inequality>,
        order: u32,
    ) -> Result<usize> {
        let name = name.into();
        let space = domain.space;
        if target.space() != space {
            return Err(SosError::SpaceMismatch { constraint: name, expected: space, got: target.space() });
        }
        let budget = 2 * order;
        if target.degree() > budget {
            return Err(SosError::DegreeBudget { constraint: name, degree: target.degree(), budget });
        }
        let mut gs: Vec<Inequality> = vec![Inequality { label: "1".into(), poly: Polynomial::constant(space, 1.0) }];
        gs.extend(domain.inequalities.iter().cloned());
        gs.extend(time_multiplier);
        for g in &gs {
            if g.poly.space() != space {
                return Err(SosError::SpaceMismatch { constraint: name, expected: space, got: g.poly.space() });
            }
            if g.poly.degree() > budget {
                return Err(SosError::DegreeBudget {
                    constraint: format!("{name} / {}", g.label),
                    degree: g.poly.degree(),
                    budget,
                });
            }
        }

        let index = self.constraints.len();
        let monomials = monomial_basis(space, budget);
        let lookup: HashMap<&Monomial, usize> = monomials.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut rows: Vec<PendingRow> = monomials
            .iter()
            .map(|m| PendingRow { constraint: index, monomial: m.clone(), free: vec![], psd: vec![], rhs: 0.0 })
            .collect();
        for (m, c) in target.constant_part().terms() {
            rows[lookup[m]].rhs -= c;
        }
        for (j, p) in target.parts() {
            for (m, c) in p.terms() {
                rows[lookup[m]].free.push((j, c));
            }
        }

        let mut multipliers = Vec::with_capacity(gs.len());
        for g in gs {
            let half = multiplier_degree(order, g.poly.degree()) / 2;
            let basis = monomial_basis(space, half);
            let n = basis.len();
            let block = self.new_block(n);
            let g_terms: Vec<(&Monomial, f64)> = g.poly.terms().collect();
            for a in 0..n {
                for b in a..n {
                    let ab = basis[a].mul(&basis[b]);
                    let k = svec_index(a, b, n);
                    let w = if a == b { 1.0 } else { SQRT2 };
                    for (gm, gc) in &g_terms {
                        let row = lookup[&ab.mul(gm)];
                        rows[row].psd.push((block, k, -w * gc));
                    }
                }
            }
            multipliers.push(Multiplier { label: g.label, g: g.poly, basis, block });
        }
        self.rows.extend(rows);
        self.constraints.push(PutinarConstraint { name, target, domain, multipliers, order });
        Ok(index)
    }

    /// Assembles the conic problem, dropping identically zero rows.
    pub fn build(self) -> Result<SosProgram> {
        let mut block_offset = Vec::with_capacity(self.psd.len());
        let mut offset = self.n_free;
        for &n in &self.psd {
            block_offset.push(offset);
            offset += svec_len(n);
        }
        let n_vars = offset;
        let mut triplets = Vec::new();
        let mut b = Vec::new();
        let mut row_meta = Vec::new();
        for row in self.rows {
            if row.free.is_empty() && row.psd.is_empty() {
                if row.rhs != 0.0 {
                    return Err(SosError::UnmatchedRow {
                        constraint: self.constraints[row.constraint].name.clone(),
                        monomial: row.monomial.exponents().to_vec(),
                    });
                }
                continue;
            }
            let r = b.len();
            triplets.extend(row.free.iter().map(|&(j, c)| (r, j, c)));
            triplets.extend(row.psd.iter().map(|&(blk, k, c)| (r, block_offset[blk] + k, c)));
            b.push(row.rhs);
            row_meta.push((row.constraint, row.monomial));
        }
        let mut c = vec![0.0; n_vars];
        for (j, w) in self.objective {
            c[j] += w;
        }
        if self.trace_weight != 0.0 {
            for (&o, &n) in block_offset.iter().zip(&self.psd) {
                for i in 0..n {
                    c[o + svec_index(i, i, n)] += self.trace_weight;
                }
            }
        }
        let mut cones = Vec::new();
        if self.n_free > 0 {
            cones.push(Cone::Free(self.n_free));
        }
        cones.extend(self.psd.iter().map(|&n| Cone::Psd(n)));
        let a = SparseMatrix::from_triplets(b.len(), n_vars, triplets);
        Ok(SosProgram {
            problem: ConicProblem { cones, c, a, b },
            polys: self.polys,
            constraints: self.constraints,
            block_offset,
            block_size: self.psd,
            row_meta,
        })
    }
}

/// Per-constraint verification figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub name: String,
    /// Largest coefficient mismatch of the identity.
    pub max_residual: f64,
    /// Smallest eigenvalue over the constraint's Gram matrices.
    pub min_eigenvalue: f64,
    /// `s` such that `target >= -s` holds on the domain despite the
    /// residual and any negative Gram eigenvalues.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    pub tol_eq: f64,
    pub tol_psd: f64,
    pub pass: bool,
    pub constraints: Vec<ConstraintReport>,
}

/// An assembled program with the bookkeeping needed to read solutions back.
pub struct SosProgram {
    pub problem: ConicProblem,
    pub polys: Vec<DecisionPoly>,
    pub constraints: Vec<PutinarConstraint>,
    block_offset: Vec<usize>,
    block_size: Vec<usize>,
    row_meta: Vec<(usize, Monomial)>,
}

impl SosProgram {
    pub fn poly(&self, name: &str) -> Option<&DecisionPoly> {
        self.polys.iter().find(|p| p.name == name)
    }

    /// The Gram matrix of a multiplier as `svec` entries.
    pub fn gram<'a>(&self, z: &'a [f64], m: &Multiplier) -> &'a [f64] {
        let o = self.block_offset[m.block];
        &z[o..o + svec_len(self.block_size[m.block])]
    }

    /// The multiplier polynomial `b' G b`.
    pub fn multiplier_poly(&self, z: &[f64], space: VarSpace, m: &Multiplier) -> Polynomial {
        let n = m.basis.len();
        let g = self.gram(z, m);
        let mut terms = Vec::with_capacity(svec_len(n));
        for a in 0..n {
            for b in a..n {
                let w = if a == b { 1.0 } else { SQRT2 };
                terms.push((m.basis[a].mul(&m.basis[b]), w * g[svec_index(a, b, n)]));
            }
        }
        Polynomial::from_terms(space, terms)
    }

    /// Smallest correction of `z` that satisfies the linear identities
    /// exactly, `z + A'(AA')^-1 (b - Az)`, with `AA'` inverted by
    /// Jacobi-preconditioned conjugate gradients. `None` if they stall.
    pub fn project(&self, z: &[f64]) -> Option<Vec<f64>> {
        let a = &self.problem.a;
        let (m, n) = (a.nrows, a.ncols);
        let mut diag = vec![0.0; m];
        for (r, _, v) in a.triplets() {
            diag[r] += v * v;
        }
        if diag.iter().any(|d| !(*d > 0.0)) {
            return None;
        }
        let mut z = z.to_vec();
        let mut az = vec![0.0; m];
        let mut step = vec![0.0; n];
        let bnorm = 1.0 + norm(&self.problem.b);
        for _ in 0..2 {
            a.mul_vec(&z, &mut az);
            let r: Vec<f64> = self.problem.b.iter().zip(&az).map(|(b, v)| b - v).collect();
            let w = cg_normal(a, &diag, &r, 1e-15 * bnorm, 20 * m.max(100))?;
            a.mul_t_vec(&w, &mut step);
            z.iter_mut().zip(&step).for_each(|(v, d)| *v += d);
        }
        z.iter().all(|v| v.is_finite()).then_some(z)
    }

    /// Checks every identity and Gram matrix for an assignment `z`.
    pub fn verify(&self, z: &[f64], tol_eq: f64, tol_psd: f64) -> Result<VerificationReport> {
        if z.len() != self.problem.num_vars() {
            return Err(SosError::Dimension { expected: self.problem.num_vars(), got: z.len() });
        }
        let mut az = vec![0.0; self.problem.num_rows()];
        self.problem.a.mul_vec(z, &mut az);
        let mut reports: Vec<ConstraintReport> = self
            .constraints
            .iter()
            .map(|c| ConstraintReport {
                name: c.name.clone(),
                max_residual: 0.0,
                min_eigenvalue: f64::INFINITY,
                slack: 0.0,
            })
            .collect();
        for (r, (ci, m)) in self.row_meta.iter().enumerate() {
            let res = (az[r] - self.problem.b[r]).abs();
            let rep = &mut reports[*ci];
            rep.max_residual = rep.max_residual.max(res);
            rep.slack += res * m.max_abs_on_box(&self.constraints[*ci].domain.bounds);
        }
        for (c, rep) in self.constraints.iter().zip(&mut reports) {
            for m in &c.multipliers {
                let n = m.basis.len();
                let lambda = min_eigenvalue(smat(self.gram(z, m), n).as_ref()).unwrap_or(f64::NAN);
                rep.min_eigenvalue = rep.min_eigenvalue.min(lambda);
                if !(lambda >= 0.0) {
                    let bounds = &c.domain.bounds;
                    let basis_norm: f64 = m.basis.iter().map(|b| b.max_abs_on_box(bounds).powi(2)).sum();
                    let neg = if lambda.is_nan() { f64::INFINITY } else { -lambda };
                    rep.slack += neg * basis_norm * m.g.abs_bound_on_box(bounds);
                }
            }
        }
        let max_residual = reports.iter().map(|r| r.max_residual).fold(0.0, f64::max);
        let min_eig = reports.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
        Ok(VerificationReport {
            max_residual,
            min_eigenvalue: min_eig,
            tol_eq,
            tol_psd,
            pass: max_residual <= tol_eq && min_eig >= -tol_psd,
            constraints: reports,
        })
    }

    /// Largest `|lhs - rhs| / (1 + |lhs|)` of every identity at `n` random
    /// points of its domain (box points when rejection sampling fails).
    pub fn pointwise_check(&self, z: &[f64], n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let space = c.domain.space;
            let lhs = c.target.evaluate(z).compile();
            let rhs: Vec<_> =
                c.multipliers.iter().map(|m| (self.multiplier_poly(z, space, m).compile(), m.g.compile())).collect();
            let mut done = 0;
            let mut attempts = 0;
            while done < n {
                attempts += 1;
                let x = uniform_point(&mut rng, &c.domain.bounds);
                let inside =
                    c.domain.contains(&x) && c.multipliers.iter().all(|m| m.g.evaluate(&x).is_ok_and(|v| v >= 0.0));
                if !inside && attempts < 200 * n {
                    continue;
                }
                done += 1;
                let l = lhs.eval(&x);
                let r: f64 = rhs.iter().map(|(s, g)| s.eval(&x) * g.eval(&x)).sum();
                worst = worst.max((l - r).abs() / (1.0 + l.abs()));
            }
        }
        worst
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `A A' w = r` by preconditioned conjugate gradients, stopping once
/// `||r - A A' w|| <= tol`.
fn cg_normal(a: &SparseMatrix, diag: &[f64], r: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let m = r.len();
    let mut w = vec![0.0; m];
    let mut res = r.to_vec();
    let mut zv: Vec<f64> = res.iter().zip(diag).map(|(x, d)| x / d).collect();
    let mut p = zv.clone();
    let mut rz: f64 = res.iter().zip(&zv).map(|(x, y)| x * y).sum();
    let mut atp = vec![0.0; a.ncols];
    let mut q = vec![0.0; m];
    let start = norm(&res);
    let mut best = start;
    let mut since_best = 0;
    for _ in 0..max_iter {
        let rn = norm(&res);
        if rn <= tol {
            return Some(w);
        }
        if rn < best {
            best = rn;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 200 {
                break;
            }
        }
        a.mul_t_vec(&p, &mut atp);
        a.mul_vec(&atp, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(x, y)| x * y).sum();
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for i in 0..m {
            w[i] += alpha * p[i];
            res[i] -= alpha * q[i];
        }
        for i in 0..m {
            zv[i] = res[i] / diag[i];
        }
        let rz_new: f64 = res.iter().zip(&zv).map(|(x, y)| x * y).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = zv[i] + beta * p[i];
        }
    }
    // a partial solve still shrinks the residual
    (norm(&res) < 1e-3 * start).then_some(w)
}

#[cfg(test)]
mod tests;
