use super::*;
use crate::poly::parse_polynomial;
use crate::sdp::{solve, SolverOptions, Status};

fn p1(src: &str) -> Polynomial {
    parse_polynomial(src, VarSpace::states(1), |s| (s == "x").then_some(0)).unwrap()
}

fn ineq(src: &str) -> Inequality {
    Inequality { label: src.into(), poly: p1(src) }
}

fn unit_domain(extra: &[&str]) -> Domain {
    let mut inequalities = vec![ineq("x"), ineq("1 - x")];
    inequalities.extend(extra.iter().map(|s| ineq(s)));
    Domain { space: VarSpace::states(1), inequalities, bounds: vec![(0.0, 1.0)] }
}

fn solved(program: &SosProgram) -> Vec<f64> {
    let sol = solve(&program.problem, &SolverOptions::default()).unwrap();
    assert!(matches!(sol.status, Status::Optimal), "{:?}", sol.status);
    sol.z
}

#[test]
fn moments_examples() {
    let m = lebesgue_moments(&[(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
    assert_eq!(m.values[0], 1.0);
    let x1x2 = m.basis.iter().position(|b| b.exponents() == [1, 1]).unwrap();
    assert!((m.values[x1x2] - 0.25).abs() < 1e-15);
    let m = lebesgue_moments(&[(0.0, 2.0)], 2).unwrap();
    assert!((m.values[2] - 8.0 / 3.0).abs() < 1e-15);
    assert_eq!(lebesgue_moments(&[(0.0, f64::INFINITY)], 1), Err(SosError::UnboundedBox));
}

#[test]
fn constant_target_is_feasible() {
    let mut b = SosProgramBuilder::new();
    let domain = Domain { space: VarSpace::states(1), inequalities: vec![], bounds: vec![(0.0, 1.0)] };
    b.putinar("one", AffinePoly::constant(p1("1")), domain, None, 1).unwrap();
    let prog = b.build().unwrap();
    let z = solved(&prog);
    let rep = prog.verify(&z, TOL_EQ, TOL_PSD).unwrap();
    assert!(rep.pass, "{rep:?}");
    // the identity is 1 = b' G b with b = (1, x)
    let g = prog.gram(&z, &prog.constraints[0].multipliers[0]);
    assert!((g[0] - 1.0).abs() < 1e-6 && g[2].abs() < 1e-6);
}

#[test]
fn linear_target_on_halfline() {
    let mut b = SosProgramBuilder::new();
    b.putinar("x", AffinePoly::constant(p1("x")), unit_domain(&[]), None, 1).unwrap();
    let prog = b.build().unwrap();
    let z = solved(&prog);
    assert!(prog.verify(&z, TOL_EQ, TOL_PSD).unwrap().pass);
    assert!(prog.pointwise_check(&z, 50, 1) < 1e-6);
}

#[test]
fn hand_built_identity_and_perturbation() {
    // x - x^2 = 1 * x(1 - x)
    let mut b = SosProgramBuilder::new();
    let domain = Domain { space: VarSpace::states(1), inequalities: vec![ineq("x*(1-x)")], bounds: vec![(0.0, 1.0)] };
    b.putinar("q", AffinePoly::constant(p1("x - x^2")), domain, None, 1).unwrap();
    let prog = b.build().unwrap();
    let c = &prog.constraints[0];
    assert_eq!(c.multipliers[1].basis.len(), 1);
    let mut z = vec![0.0; prog.problem.num_vars()];
    let o = prog.block_offset[c.multipliers[1].block];
    z[o] = 1.0;
    let rep = prog.verify(&z, TOL_EQ, TOL_PSD).unwrap();
    assert_eq!(rep.max_residual, 0.0);
    assert!(rep.min_eigenvalue >= 0.0);
    assert!(rep.pass);
    assert_eq!(rep.constraints[0].slack, 0.0);

    let s0 = prog.block_offset[c.multipliers[0].block];
    z[s0] += 1e-3;
    let rep = prog.verify(&z, TOL_EQ, TOL_PSD).unwrap();
    assert!(rep.max_residual >= 1e-3 - 1e-15);
    assert!(!rep.pass);

    z[s0] -= 2e-3;
    let rep = prog.verify(&z, TOL_EQ, TOL_PSD).unwrap();
    assert!(rep.min_eigenvalue < -1e-4 && !rep.pass);
    assert!(rep.constraints[0].slack >= 2e-3);
}

#[test]
fn slack_bounds_the_violation() {
    // target = -0.01 cannot be certified; a forced assignment must report
    // a slack that covers the gap
    let mut b = SosProgramBuilder::new();
    b.putinar("neg", AffinePoly::constant(p1("-0.01")), unit_domain(&[]), None, 1).unwrap();
    let prog = b.build().unwrap();
    let z = vec![0.0; prog.problem.num_vars()];
    let rep = prog.verify(&z, TOL_EQ, TOL_PSD).unwrap();
    assert!(rep.constraints[0].slack >= 0.01);
}

#[test]
fn decision_polynomial_with_objective() {
    // minimize the integral of v over [0, 1] subject to v >= x there
    let mut b = SosProgramBuilder::new();
    let space = VarSpace::states(1);
    let v = b.add_poly("v", space, 2);
    let target = v.affine().add_poly(&p1("-x")).unwrap();
    b.putinar("v >= x", target, unit_domain(&[]), None, 1).unwrap();
    let l = lebesgue_moments(&[(0.0, 1.0)], 2).unwrap();
    b.add_objective(&v, &l.values);
    let prog = b.build().unwrap();
    let sol = solve(&prog.problem, &SolverOptions::default()).unwrap();
    assert!(matches!(sol.status, Status::Optimal));
    assert!((sol.primal_objective - 0.5).abs() < 1e-6);
    let vp = prog.poly("v").unwrap().extract(&sol.z);
    for x in [0.0, 0.3, 1.0] {
        assert!(vp.evaluate(&[x]).unwrap() >= x - 1e-6);
    }
    assert!(prog.verify(&sol.z, TOL_EQ, TOL_PSD).unwrap().pass);
    assert!(prog.pointwise_check(&sol.z, 50, 2) < 1e-6);
}

#[test]
fn degree_budget() {
    let mut b = SosProgramBuilder::new();
    let err = b.putinar("cubic", AffinePoly::constant(p1("x^3")), unit_domain(&[]), None, 1).unwrap_err();
    assert!(matches!(err, SosError::DegreeBudget { degree: 3, budget: 2, .. }));
    let err = b.putinar("g", AffinePoly::constant(p1("1")), unit_domain(&["x^3"]), None, 1).unwrap_err();
    assert!(matches!(err, SosError::DegreeBudget { .. }));
}

#[test]
fn multiplier_degree_rule() {
    let space = VarSpace::with_time(2);
    let x = |s: &str| parse_polynomial(s, space, |v| ["x1", "x2", "t"].iter().position(|n| *n == v)).unwrap();
    let domain = Domain {
        space,
        inequalities: vec![
            Inequality { label: "a".into(), poly: x("x1") },
            Inequality { label: "b".into(), poly: x("x1*(1-x1)") },
            Inequality { label: "c".into(), poly: x("1 - x1^2*x2") },
        ],
        bounds: vec![(0.0, 1.0); 3],
    };
    let tau = Inequality { label: "t(1-t)".into(), poly: x("t*(1-t)") };
    for d in 2..=4 {
        let mut b = SosProgramBuilder::new();
        b.putinar("c", AffinePoly::constant(x("1")), domain.clone(), Some(tau.clone()), d).unwrap();
        let prog = b.build().unwrap();
        for m in &prog.constraints[0].multipliers {
            assert!(m.degree() + m.g.degree() <= 2 * d);
            assert_eq!(m.degree(), multiplier_degree(d, m.g.degree()));
        }
    }
}

#[test]
fn rows_are_independent() {
    let mut b = SosProgramBuilder::new();
    let space = VarSpace::states(1);
    let v = b.add_poly("v", space, 2);
    b.putinar("a", v.affine(), unit_domain(&[]), None, 1).unwrap();
    b.putinar("b", v.affine().scale(-1.0).add_poly(&p1("1 + x")).unwrap(), unit_domain(&["x*(1-x)"]), None, 2).unwrap();
    let prog = b.build().unwrap();
    let a = &prog.problem.a;
    let dense = faer::Mat::from_fn(a.nrows, a.ncols, |i, j| a.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v));
    let sv = dense.singular_values().unwrap();
    let rank = sv.iter().filter(|s| **s > 1e-10 * sv[0]).count();
    assert_eq!(rank, a.nrows);
}

#[test]
fn affine_operations() {
    let space = VarSpace::with_time(1);
    let p = |s: &str| parse_polynomial(s, space, |v| ["x", "t"].iter().position(|n| *n == v)).unwrap();
    let basis = monomial_basis(space, 2);
    let v = AffinePoly::decision(space, 3, &basis);
    let z: Vec<f64> = (0..3 + basis.len()).map(|i| 0.5 * i as f64 - 1.0).collect();
    let vz = v.evaluate(&z);
    let f = [p("-x + t")];
    let lv = v.liouville(&f).unwrap().evaluate(&z);
    assert_eq!(lv, vz.liouville(&f).unwrap());
    let at = v.at_time(0.3).unwrap().evaluate(&z);
    assert_eq!(at, vz.at_time(0.3).unwrap());
    let w = v.scale(2.0).sub(&v).unwrap().mul_poly(&p("x")).unwrap();
    let expect = vz.mul(&p("x")).unwrap();
    assert!(w.evaluate(&z).sub(&expect).unwrap().max_abs_coefficient() < 1e-14);
    assert!(v.sub(&v).unwrap().evaluate(&z).is_zero());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn moments_scale_with_box(c in 0.1f64..3.0, n in 1usize..4, deg in 0u32..5) {
            let unit = lebesgue_moments(&vec![(0.0, 1.0); n], deg).unwrap();
            let big = lebesgue_moments(&vec![(0.0, c); n], deg).unwrap();
            for ((m, u), v) in unit.basis.iter().zip(&unit.values).zip(&big.values) {
                let expect = c.powi((m.degree() as usize + n) as i32) * u;
                prop_assert!((v - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}
