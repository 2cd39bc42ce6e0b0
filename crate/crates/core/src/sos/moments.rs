use serde::{Deserialize, Serialize};

use super::SosError;
use crate::poly::{monomial_basis, Monomial, VarSpace};

/// Integrals of the basis monomials over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LebesgueMomentVector {
    pub degree: u32,
    pub basis: Vec<Monomial>,
    pub values: Vec<f64>,
}

/// `prod_i (u_i^{a_i+1} - l_i^{a_i+1}) / (a_i + 1)`
pub fn box_moment(bounds: &[(f64, f64)], m: &Monomial) -> f64 {
    m.exponents()
        .iter()
        .zip(bounds)
        .map(|(&a, &(l, u))| {
            let k = a as i32 + 1;
            (u.powi(k) - l.powi(k)) / k as f64
        })
        .product()
}

/// Moments of every monomial of `monomial_basis(states(n), degree)` over the box.
pub fn lebesgue_moments(bounds: &[(f64, f64)], degree: u32) -> Result<LebesgueMomentVector, SosError> {
    if bounds.iter().any(|(l, u)| !(l.is_finite() && u.is_finite())) {
        return Err(SosError::UnboundedBox);
    }
    let basis = monomial_basis(VarSpace::states(bounds.len()), degree);
    let values = basis.iter().map(|m| box_moment(bounds, m)).collect();
    Ok(LebesgueMomentVector { degree, basis, values })
}
