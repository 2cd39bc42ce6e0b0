use std::collections::BTreeMap;

use crate::poly::{Monomial, PolyError, Polynomial, VarSpace};

type Result<T> = std::result::Result<T, PolyError>;

/// `p_c + sum_j z_j p_j`: a polynomial whose coefficients are affine in the
/// decision variables `z` (free-block indices of the conic problem).
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePoly {
    constant: Polynomial,
    parts: BTreeMap<usize, Polynomial>,
}

impl AffinePoly {
    pub fn constant(p: Polynomial) -> Self {
        Self { constant: p, parts: BTreeMap::new() }
    }

    /// `sum_j z_{offset + j} basis_j`
    pub fn decision(space: VarSpace, offset: usize, basis: &[Monomial]) -> Self {
        let parts = basis
            .iter()
            .enumerate()
            .map(|(j, m)| (offset + j, Polynomial::from_terms(space, [(m.clone(), 1.0)])))
            .collect();
        Self { constant: Polynomial::zero(space), parts }
    }

    pub fn space(&self) -> VarSpace {
        self.constant.space()
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn parts(&self) -> impl Iterator<Item = (usize, &Polynomial)> {
        self.parts.iter().map(|(j, p)| (*j, p))
    }

    pub fn degree(&self) -> u32 {
        self.parts.values().map(Polynomial::degree).chain([self.constant.degree()]).max().unwrap_or(0)
    }

    fn map(&self, f: impl Fn(&Polynomial) -> Result<Polynomial>) -> Result<Self> {
        let mut parts = BTreeMap::new();
        for (j, p) in &self.parts {
            let q = f(p)?;
            if !q.is_zero() {
                parts.insert(*j, q);
            }
        }
        Ok(Self { constant: f(&self.constant)?, parts })
    }

    pub fn add(&self, other: &AffinePoly) -> Result<Self> {
        let mut out = self.clone();
        out.constant = out.constant.add(&other.constant)?;
        for (j, p) in &other.parts {
            let sum = match out.parts.get(j) {
                Some(q) => q.add(p)?,
                None => p.clone(),
            };
            if sum.is_zero() {
                out.parts.remove(j);
            } else {
                out.parts.insert(*j, sum);
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &AffinePoly) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|p| Ok(p.scale(c))).expect("scaling cannot fail")
    }

    pub fn add_poly(&self, p: &Polynomial) -> Result<Self> {
        let mut out = self.clone();
        out.constant = out.constant.add(p)?;
        Ok(out)
    }

    pub fn mul_poly(&self, q: &Polynomial) -> Result<Self> {
        self.map(|p| p.mul(q))
    }

    pub fn differentiate(&self, var: usize) -> Result<Self> {
        self.map(|p| p.differentiate(var))
    }

    pub fn liouville(&self, field: &[Polynomial]) -> Result<Self> {
        self.map(|p| p.liouville(field))
    }

    /// Fixes time, giving an affine polynomial over the states.
    pub fn at_time(&self, t: f64) -> Result<Self> {
        self.map(|p| p.at_time(t))
    }

    pub fn embed(&self, target: VarSpace) -> Result<Self> {
        self.map(|p| p.embed(target))
    }

    /// The polynomial obtained for a given assignment of the decision variables.
    pub fn evaluate(&self, z: &[f64]) -> Polynomial {
        let mut out = self.constant.clone();
        for (j, p) in &self.parts {
            if z[*j] != 0.0 {
                out = out.add(&p.scale(z[*j])).expect("parts share the space");
            }
        }
        out
    }
}
