//! Sparse multivariate polynomials over `(x_1..x_n[, t])`.
//!
//! Coefficients are `f64`; after every operation terms with magnitude below
//! [`DROP_TOLERANCE`] are removed so that sparsity survives repeated
//! arithmetic. Products and compositions fail once the result degree would
//! exceed [`DEGREE_CAP`].

mod monomial;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use monomial::{basis_size, monomial_basis, Monomial, VarSpace};
pub use parse::parse_polynomial;

/// Coefficients smaller than this are dropped during normalization.
pub const DROP_TOLERANCE: f64 = 1e-14;

/// Hard limit on the total degree produced by `mul`, `pow` and `substitute`.
pub const DEGREE_CAP: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable space mismatch: {left} vs {right}")]
    VarSpaceMismatch { left: VarSpace, right: VarSpace },
    #[error("variable index {index} out of range for {arity} variables")]
    InvalidVariable { index: usize, arity: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("result degree {degree} exceeds the cap of {cap}")]
    DegreeCap { degree: u32, cap: u32 },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
}

pub type Result<T> = std::result::Result<T, PolyError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    space: VarSpace,
    #[serde(with = "term_list")]
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(space: VarSpace) -> Self {
        Self { space, terms: BTreeMap::new() }
    }

    pub fn constant(space: VarSpace, value: f64) -> Self {
        Self::from_terms(space, [(Monomial::one(space.arity()), value)])
    }

    /// The polynomial `x_index`.
    pub fn var(space: VarSpace, index: usize) -> Result<Self> {
        check_index(space, index)?;
        Ok(Self::from_terms(space, [(Monomial::var(space.arity(), index), 1.0)]))
    }

    /// Builds a polynomial, merging repeated monomials and dropping tiny terms.
    ///
    /// Panics if a monomial's arity does not match `space`.
    pub fn from_terms(space: VarSpace, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.arity(), space.arity(), "monomial arity does not match {space}");
            *map.entry(m).or_insert(0.0) += c;
        }
        let mut p = Self { space, terms: map };
        p.normalize();
        p
    }

    pub fn space(&self) -> VarSpace {
        self.space
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms.keys().map(|m| m.exponents()[var]).max().unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn normalize(&mut self) {
        self.terms.retain(|_, c| c.abs() >= DROP_TOLERANCE);
    }

    fn same_space(&self, other: &Polynomial) -> Result<()> {
        if self.space != other.space {
            return Err(PolyError::VarSpaceMismatch { left: self.space, right: other.space });
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.same_space(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.normalize();
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        let mut out =
            Polynomial { space: self.space, terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect() };
        out.normalize();
        out
    }

    pub fn add_constant(&self, c: f64) -> Polynomial {
        let mut out = self.clone();
        *out.terms.entry(Monomial::one(self.space.arity())).or_insert(0.0) += c;
        out.normalize();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.same_space(other)?;
        let degree = self.degree() + other.degree();
        if !self.is_zero() && !other.is_zero() && degree > DEGREE_CAP {
            return Err(PolyError::DegreeCap { degree, cap: DEGREE_CAP });
        }
        let mut terms = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                *terms.entry(a.mul(b)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Polynomial { space: self.space, terms };
        out.normalize();
        Ok(out)
    }

    pub fn pow(&self, k: u32) -> Result<Polynomial> {
        let degree = self.degree().saturating_mul(k);
        if degree > DEGREE_CAP {
            return Err(PolyError::DegreeCap { degree, cap: DEGREE_CAP });
        }
        let mut acc = Polynomial::constant(self.space, 1.0);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base)?;
            }
        }
        Ok(acc)
    }

    /// Formal partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Result<Polynomial> {
        check_index(self.space, var)?;
        let mut terms = BTreeMap::new();
        for (m, c) in &self.terms {
            let e = m.exponents()[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.exponents().to_vec();
            exps[var] -= 1;
            *terms.entry(Monomial::new(exps)).or_insert(0.0) += c * e as f64;
        }
        let mut out = Polynomial { space: self.space, terms };
        out.normalize();
        Ok(out)
    }

    /// Liouville operator `L v = dv/dt + grad_x v . f`.
    ///
    /// `self` and every component of `field` live in the same space; `field`
    /// has one entry per state. Without a time variable the `dv/dt` term is
    /// absent.
    pub fn liouville(&self, field: &[Polynomial]) -> Result<Polynomial> {
        if field.len() != self.space.n_states {
            return Err(PolyError::DimensionMismatch { expected: self.space.n_states, got: field.len() });
        }
        let mut out = match self.space.time_index() {
            Some(t) => self.differentiate(t)?,
            None => Polynomial::zero(self.space),
        };
        for (i, fi) in field.iter().enumerate() {
            if fi.is_zero() || self.degree_in(i) == 0 {
                continue;
            }
            out = out.add(&self.differentiate(i)?.mul(fi)?)?;
        }
        Ok(out)
    }

    /// Composition: bound variables are replaced by polynomials over `target`,
    /// unbound ones keep their index in `target`.
    pub fn substitute(&self, target: VarSpace, bindings: &BTreeMap<usize, Polynomial>) -> Result<Polynomial> {
        let arity = self.space.arity();
        for (&var, p) in bindings {
            check_index(self.space, var)?;
            if p.space != target {
                return Err(PolyError::VarSpaceMismatch { left: target, right: p.space });
            }
        }
        let mut degree = 0u32;
        for m in self.terms.keys() {
            let mut d = 0;
            for (var, &e) in m.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                match bindings.get(&var) {
                    Some(p) => d += e * p.degree(),
                    None => {
                        if var >= target.arity() {
                            return Err(PolyError::InvalidVariable { index: var, arity: target.arity() });
                        }
                        d += e;
                    }
                }
            }
            degree = degree.max(d);
        }
        if degree > DEGREE_CAP {
            return Err(PolyError::DegreeCap { degree, cap: DEGREE_CAP });
        }

        let mut powers: BTreeMap<(usize, u32), Polynomial> = BTreeMap::new();
        let mut out = Polynomial::zero(target);
        for (m, c) in &self.terms {
            let mut passthrough = vec![0u32; target.arity()];
            let mut term = Polynomial::constant(target, *c);
            for var in 0..arity {
                let e = m.exponents()[var];
                if e == 0 {
                    continue;
                }
                match bindings.get(&var) {
                    Some(p) => {
                        let pw = match powers.get(&(var, e)) {
                            Some(pw) => pw.clone(),
                            None => {
                                let pw = p.pow(e)?;
                                powers.insert((var, e), pw.clone());
                                pw
                            }
                        };
                        term = term.mul(&pw)?;
                    }
                    None => passthrough[var] += e,
                }
            }
            let shift = Monomial::new(passthrough);
            let shifted = Polynomial::from_terms(target, term.terms.iter().map(|(mm, cc)| (mm.mul(&shift), *cc)));
            out = out.add(&shifted)?;
        }
        Ok(out)
    }

    /// Re-expresses a state-space polynomial in a larger space that contains
    /// the same leading variables (e.g. `x` into `(x, t)`).
    pub fn embed(&self, target: VarSpace) -> Result<Polynomial> {
        if target.n_states != self.space.n_states || target.arity() < self.space.arity() {
            return Err(PolyError::VarSpaceMismatch { left: self.space, right: target });
        }
        Ok(Polynomial {
            space: target,
            terms: self.terms.iter().map(|(m, c)| (m.extend_to(target.arity()), *c)).collect(),
        })
    }

    /// Fixes the time variable, returning a state-only polynomial.
    pub fn at_time(&self, t: f64) -> Result<Polynomial> {
        let Some(ti) = self.space.time_index() else {
            return Ok(self.clone());
        };
        let target = self.space.state_space();
        let terms = self.terms.iter().map(|(m, c)| {
            let e = m.exponents()[ti];
            (Monomial::new(m.exponents()[..ti].to_vec()), c * t.powi(e as i32))
        });
        Ok(Polynomial::from_terms(target, terms))
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.space.arity() {
            return Err(PolyError::DimensionMismatch { expected: self.space.arity(), got: point.len() });
        }
        Ok(self.terms.iter().map(|(m, c)| c * m.evaluate(point)).sum())
    }

    /// A flattened form for repeated evaluation in hot loops.
    pub fn compile(&self) -> CompiledPolynomial {
        CompiledPolynomial {
            arity: self.space.arity(),
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| {
                    let factors =
                        m.exponents().iter().enumerate().filter(|(_, &e)| e > 0).map(|(i, &e)| (i as u32, e)).collect();
                    (c, factors)
                })
                .collect(),
        }
    }

    /// Upper bound of `p` over a box, term by term.
    pub fn upper_bound_on_box(&self, bounds: &[(f64, f64)]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                let (lo, hi) = m.range_on_box(bounds);
                if *c >= 0.0 {
                    c * hi
                } else {
                    c * lo
                }
            })
            .sum()
    }

    /// Upper bound of `|p|` over a box via the triangle inequality.
    pub fn abs_bound_on_box(&self, bounds: &[(f64, f64)]) -> f64 {
        self.terms.iter().map(|(m, c)| c.abs() * m.max_abs_on_box(bounds)).sum()
    }
}

fn check_index(space: VarSpace, index: usize) -> Result<()> {
    if index >= space.arity() {
        return Err(PolyError::InvalidVariable { index, arity: space.arity() });
    }
    Ok(())
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let names: Vec<String> = (0..self.space.arity())
            .map(|i| match self.space.time_index() {
                Some(t) if t == i => "t".to_string(),
                _ => format!("x{}", i + 1),
            })
            .collect();
        for (k, (m, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " {} ", if *c < 0.0 { '-' } else { '+' })?;
            } else if *c < 0.0 {
                write!(f, "-")?;
            }
            write!(f, "{}", c.abs())?;
            for (i, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*{}", names[i])?,
                    _ => write!(f, "*{}^{}", names[i], e)?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CompiledPolynomial {
    arity: usize,
    terms: Vec<(f64, Vec<(u32, u32)>)>,
}

impl CompiledPolynomial {
    /// Evaluates without a length check beyond a debug assertion.
    #[inline]
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.arity);
        let mut acc = 0.0;
        for (c, factors) in &self.terms {
            let mut v = *c;
            for &(i, e) in factors {
                let x = point[i as usize];
                v *= match e {
                    1 => x,
                    2 => x * x,
                    _ => x.powi(e as i32),
                };
            }
            acc += v;
        }
        acc
    }
}

/// Serializes the term map as `[{"exponents": [...], "coefficient": c}, ...]`.
mod term_list {
    use super::Monomial;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Term {
        exponents: Monomial,
        coefficient: f64,
    }

    pub fn serialize<S: Serializer>(terms: &BTreeMap<Monomial, f64>, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<Term> = terms.iter().map(|(m, &c)| Term { exponents: m.clone(), coefficient: c }).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Monomial, f64>, D::Error> {
        let list = Vec::<Term>::deserialize(d)?;
        Ok(list.into_iter().map(|t| (t.exponents, t.coefficient)).collect())
    }
}
