use super::*;
use crate::model::{disjoint_example, static_example, BoxForm};
use crate::oracle::mc_volume;

fn opts() -> SolverOptions {
    SolverOptions { verbose: std::env::var("SDP_VERBOSE").is_ok(), ..SolverOptions::default() }
}

fn outer(model: &EstimationModel, d: u32) -> SetApproximation {
    let program = build_outer_program(model, &RelaxOptions::new(d)).unwrap();
    let result = program.solve(&opts()).unwrap();
    extract_set(&program, &result).unwrap()
}

#[test]
fn degree_rules() {
    assert_eq!(arc_degree(3, 2), 5);
    assert_eq!(arc_degree(3, 0), 6);
    assert_eq!(arc_degree(3, 1), 6);
    assert_eq!(minimum_order(&static_example(BoxForm::Quadratic)), 1);
}

#[test]
fn structure_of_outer_program() {
    let m = static_example(BoxForm::Quadratic);
    let p = build_outer_program(&m, &RelaxOptions::new(2)).unwrap();
    // one arc: nonnegativity, initial, terminal, Liouville
    assert_eq!(p.roles, vec![Role::Nonnegative, Role::Initial, Role::Terminal, Role::Arc(0)]);
    assert_eq!(p.sos.polys.len(), 2);
    assert_eq!(p.sos.polys[0].degree, 4);
    let c = build_certificate_program(&m, &RelaxOptions::new(2)).unwrap();
    assert!(c.sos.poly("v0").is_none());
    assert!(c.sos.problem.c.iter().all(|v| *v == 0.0));
}

#[test]
fn rejects_unnormalized_and_low_order() {
    let raw = crate::model::enzyme_file().build_raw().unwrap();
    assert!(matches!(build_outer_program(&raw, &RelaxOptions::new(3)), Err(RelaxError::NotNormalized)));
    let mut m = static_example(BoxForm::Quadratic);
    let g = crate::poly::parse_polynomial("x^4", m.space(), |_| Some(0)).unwrap();
    m.add_measurement(1, "quartic", g).unwrap();
    assert!(matches!(build_outer_program(&m, &RelaxOptions::new(1)), Err(RelaxError::OrderTooLow { minimum: 2, .. })));
}

#[test]
fn static_outer_contains_true_set() {
    let m = static_example(BoxForm::Quadratic);
    let s = outer(&m, 4);
    assert!(s.verification.pass);
    assert!(s.delta < 1e-5, "delta {}", s.delta);
    assert!(s.objective >= 0.6 - 1e-6, "objective {}", s.objective);
    for i in 0..=1000 {
        let x = 0.2 + 0.6 * i as f64 / 1000.0;
        assert!(s.contains(&[x]), "x = {x}, v0 = {}", s.value(&[x]));
    }
    let vol = mc_volume(|x| s.contains(x), &[(0.0, 1.0)], 20_000, 1);
    assert!(vol.value >= 0.6 - 3.0 * vol.std_error);
    assert!(s.pointwise_error < 1e-6);
}

#[test]
fn order_one_is_sound_but_loose() {
    let m = static_example(BoxForm::Quadratic);
    let s = outer(&m, 1);
    for x in [0.2, 0.5, 0.8] {
        assert!(s.contains(&[x]));
    }
}

#[test]
fn violation_of_lower_bound() {
    let m = static_example(BoxForm::Linear);
    let sched = violation_schedule(&m, false);
    assert_eq!(sched.len(), 2);
    let idx = sched
        .iter()
        .copied()
        .find(|i| i.kappa == 1 && m.measurements[1].inequalities[i.eta].label.contains(">="))
        .unwrap();
    let p = build_violation_program(&m, idx, &RelaxOptions::new(3)).unwrap();
    let r = p.solve(&opts()).unwrap();
    let s = extract_set(&p, &r).unwrap();
    for i in 0..=100 {
        let x = 0.2 * i as f64 / 100.0 - 1e-3;
        if x >= 0.0 {
            assert!(s.contains(&[x]), "x = {x}");
        }
    }
    assert!(!s.contains(&[0.7]));
}

#[test]
fn disjoint_certificate() {
    let m = disjoint_example(BoxForm::Linear);
    let p = build_certificate_program(&m, &RelaxOptions::new(2)).unwrap();
    let r = p.solve(&opts()).unwrap();
    match extract_certificate(&p, &r) {
        CertificateOutcome::Found(c) => {
            assert!(c.verification.max_residual <= 1e-6 && c.verification.min_eigenvalue >= -1e-7);
            assert!(c.delta < 1.0);
        }
        CertificateOutcome::Unverified { report, delta } => panic!("unverified {report:?} {delta}"),
        CertificateOutcome::NotFound { status } => panic!("not found: {status}"),
    }
}

#[test]
fn no_certificate_for_consistent_static_model() {
    let m = static_example(BoxForm::Linear);
    let p = build_certificate_program(&m, &RelaxOptions::new(2)).unwrap();
    let r = p.solve(&opts()).unwrap();
    assert!(!matches!(extract_certificate(&p, &r), CertificateOutcome::Found(_)));
}
