use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Layout of the variables a polynomial is written in.
///
/// State variables occupy indices `0..n_states`. When `has_time` is set the
/// time variable `t` sits at index `n_states`, so a state-only polynomial
/// embeds into the `(x, t)` space without renumbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarSpace {
    pub n_states: usize,
    pub has_time: bool,
}

impl VarSpace {
    pub const fn states(n_states: usize) -> Self {
        Self { n_states, has_time: false }
    }

    pub const fn with_time(n_states: usize) -> Self {
        Self { n_states, has_time: true }
    }

    /// Total number of variables.
    pub const fn arity(&self) -> usize {
        self.n_states + self.has_time as usize
    }

    pub const fn time_index(&self) -> Option<usize> {
        if self.has_time {
            Some(self.n_states)
        } else {
            None
        }
    }

    /// The same states without the time variable.
    pub const fn state_space(&self) -> Self {
        Self::states(self.n_states)
    }
}

impl fmt::Display for VarSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.has_time {
            write!(f, "(x[{}], t)", self.n_states)
        } else {
            write!(f, "x[{}]", self.n_states)
        }
    }
}

/// A power product `x_0^a_0 ... x_{n-1}^a_{n-1}`.
///
/// Ordering is graded: lower total degree first; within a degree, higher
/// powers of lower-indexed variables come first. For two variables this lists
/// `1, x1, x2, x1^2, x1 x2, x2^2, ...` and every coefficient vector in the
/// crate is laid out in this order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    pub fn one(arity: usize) -> Self {
        Self { exps: vec![0; arity] }
    }

    pub fn var(arity: usize, index: usize) -> Self {
        let mut exps = vec![0; arity];
        exps[index] = 1;
        Self { exps }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exps
    }

    pub fn arity(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.arity(), other.arity());
        Monomial { exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect() }
    }

    /// `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut exps = Vec::with_capacity(self.exps.len());
        for (a, b) in self.exps.iter().zip(&other.exps) {
            exps.push(a.checked_sub(*b)?);
        }
        Some(Monomial { exps })
    }

    /// Pads with zero exponents up to `arity` (appending variables).
    pub fn extend_to(&self, arity: usize) -> Monomial {
        let mut exps = self.exps.clone();
        exps.resize(arity, 0);
        Monomial { exps }
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        self.exps.iter().zip(point).filter(|(e, _)| **e > 0).map(|(&e, &x)| x.powi(e as i32)).product()
    }

    /// Range of `x^alpha` over a box by interval arithmetic.
    pub fn range_on_box(&self, bounds: &[(f64, f64)]) -> (f64, f64) {
        let mut acc = (1.0, 1.0);
        for (&e, &(lo, hi)) in self.exps.iter().zip(bounds) {
            if e == 0 {
                continue;
            }
            let (a, b) = (lo.powi(e as i32), hi.powi(e as i32));
            let r = if e % 2 == 1 {
                (a, b)
            } else if lo <= 0.0 && hi >= 0.0 {
                (0.0, a.max(b))
            } else {
                (a.min(b), a.max(b))
            };
            let p = [acc.0 * r.0, acc.0 * r.1, acc.1 * r.0, acc.1 * r.1];
            acc =
                (p.iter().copied().fold(f64::INFINITY, f64::min), p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        acc
    }

    /// Maximum of `|x^alpha|` over a box.
    pub fn max_abs_on_box(&self, bounds: &[(f64, f64)]) -> f64 {
        self.exps.iter().zip(bounds).map(|(&e, &(lo, hi))| lo.abs().max(hi.abs()).powi(e as i32)).product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials of total degree `<= max_degree`, in increasing order.
pub fn monomial_basis(space: VarSpace, max_degree: u32) -> Vec<Monomial> {
    let arity = space.arity();
    let mut out = Vec::with_capacity(basis_size(arity, max_degree));
    let mut buf = vec![0u32; arity];
    for degree in 0..=max_degree {
        compositions(&mut buf, 0, degree, &mut out);
    }
    out
}

fn compositions(buf: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if buf.is_empty() {
        if remaining == 0 {
            out.push(Monomial::new(Vec::new()));
        }
        return;
    }
    if pos == buf.len() - 1 {
        buf[pos] = remaining;
        out.push(Monomial::new(buf.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        compositions(buf, pos + 1, remaining - e, out);
    }
    buf[pos] = 0;
}

/// `C(arity + degree, degree)`.
pub fn basis_size(arity: usize, max_degree: u32) -> usize {
    let d = max_degree as usize;
    let mut acc: u128 = 1;
    for i in 1..=d {
        acc = acc * (arity + i) as u128 / i as u128;
    }
    acc as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_count(arity: usize, d: u32) -> usize {
        // brute force over the cube {0..d}^arity
        let mut count = 0;
        let mut idx = vec![0u32; arity];
        loop {
            if idx.iter().sum::<u32>() <= d {
                count += 1;
            }
            let mut k = 0;
            while k < arity {
                idx[k] += 1;
                if idx[k] <= d {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == arity {
                break;
            }
        }
        count
    }

    #[test]
    fn two_vars_degree_two() {
        let basis = monomial_basis(VarSpace::states(2), 2);
        let exps: Vec<Vec<u32>> = basis.iter().map(|m| m.exponents().to_vec()).collect();
        assert_eq!(exps, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn degree_zero_is_constant() {
        let basis = monomial_basis(VarSpace::states(1), 0);
        assert_eq!(basis, vec![Monomial::one(1)]);
    }

    #[test]
    fn three_states_with_time_degree_three() {
        let basis = monomial_basis(VarSpace::with_time(3), 3);
        assert_eq!(basis.len(), enumerate_count(4, 3));
        assert_eq!(basis.len(), 35);
    }

    #[test]
    fn basis_is_strictly_increasing_and_sized() {
        for arity in 1..5 {
            for d in 0..6 {
                let basis = monomial_basis(VarSpace::states(arity), d);
                assert_eq!(basis.len(), basis_size(arity, d));
                assert_eq!(basis.len(), enumerate_count(arity, d));
                assert!(basis.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn division() {
        let a = Monomial::new(vec![2, 1]);
        let b = Monomial::new(vec![1, 1]);
        assert_eq!(a.div(&b), Some(Monomial::new(vec![1, 0])));
        assert_eq!(b.div(&a), None);
    }
}
