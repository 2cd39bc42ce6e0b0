use super::*;
use crate::model::{
    disjoint_example, enzyme_example, static_example, BoxForm, EstimationModel, TimeGrid, ENZYME_NOMINAL,
};
use crate::poly::{parse_polynomial, VarSpace};

fn field(srcs: &[&str]) -> Vec<Polynomial> {
    let n = srcs.len();
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    srcs.iter()
        .map(|s| {
            parse_polynomial(s, VarSpace::with_time(n), |v| {
                if v == "t" {
                    Some(n)
                } else {
                    names.iter().position(|x| x == v)
                }
            })
            .unwrap()
        })
        .collect()
}

fn scalar(f: &str, bounds: (f64, f64)) -> EstimationModel {
    let mut m = EstimationModel::new(
        vec!["x1".into()],
        vec![bounds],
        vec![Polynomial::zero(VarSpace::states(1))],
        TimeGrid::new(vec![0.0, 1.0]).unwrap(),
        BoxForm::Linear,
    )
    .unwrap();
    m.set_dynamics(field(&[f])).unwrap();
    m
}

#[test]
fn zero_field_is_constant() {
    let t = integrate_field(&field(&["0", "0"]), &[0.3, -2.0], &[0.0, 0.4, 1.0], 1e-2).unwrap();
    assert!(t.states.iter().all(|x| x == &vec![0.3, -2.0]));
    assert_eq!(t.times[t.grid_nodes[1]], 0.4);
    assert_eq!(*t.times.last().unwrap(), 1.0);
}

#[test]
fn exponential_growth() {
    let t = integrate_field(&field(&["x1"]), &[1.0], &[0.0, 1.0], 1e-3).unwrap();
    assert!((t.final_state()[0] - std::f64::consts::E).abs() < 1e-8);
}

#[test]
fn time_dependent_field() {
    // x' = t gives x(1) = 1/2
    let t = integrate_field(&field(&["t"]), &[0.0], &[0.0, 1.0], 0.1).unwrap();
    assert!((t.final_state()[0] - 0.5).abs() < 1e-14);
}

#[test]
fn step_halving_is_fourth_order() {
    let f = field(&["-x1*x2", "x1 - x2^2"]);
    let at = |h: f64| integrate_field(&f, &[1.0, 0.5], &[0.0, 1.0], h).unwrap().final_state().to_vec();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (a, b, c) = (at(0.1), at(0.05), at(0.025));
    let ratio = dist(&a, &b) / dist(&b, &c);
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn step_divides_every_gap() {
    let t = integrate_field(&field(&["1"]), &[0.0], &[0.0, 0.3, 1.0], 1e-3).unwrap();
    assert_eq!(t.grid_nodes, vec![0, 300, 1000]);
    assert!((t.at_grid(1)[0] - 0.3).abs() < 1e-12);
}

#[test]
fn divergence_and_bad_input() {
    let r = integrate_field(&field(&["x1^2"]), &[10.0], &[0.0, 1.0], 1e-3);
    assert!(matches!(r, Err(OracleError::Divergence { .. })));
    assert!(matches!(integrate_field(&field(&["0"]), &[0.0], &[0.0, 1.0], 0.0), Err(OracleError::InvalidStep(_))));
    assert!(matches!(
        integrate_field(&field(&["0"]), &[0.0, 1.0], &[0.0, 1.0], 0.1),
        Err(OracleError::Dimension { .. })
    ));
    let v = is_consistent(&scalar("x1^2", (0.0, 1e9)), &[10.0], 1e-3, 0.0);
    assert!(!v.consistent);
    assert_eq!(v.violation.unwrap().constraint, "divergence");
}

#[test]
fn parameters_stay_constant() {
    let m = enzyme_example();
    let x0 = m.scaling.to_scaled(&ENZYME_NOMINAL);
    let t = integrate(&m, &x0, 1e-3).unwrap();
    for x in &t.states {
        assert_eq!(&x[2..], &x0[2..]);
    }
}

#[test]
fn enzyme_consistency() {
    let m = enzyme_example();
    let nominal = m.scaling.to_scaled(&ENZYME_NOMINAL);
    assert!(is_consistent(&m, &nominal, DEFAULT_STEP, 0.0).consistent);
    let mut off = ENZYME_NOMINAL;
    off[0] = 0.5;
    let v = is_consistent(&m, &m.scaling.to_scaled(&off), DEFAULT_STEP, 0.0);
    assert!(!v.consistent);
    assert_eq!(v.violation.unwrap().time_index, Some(0));
}

#[test]
fn static_consistency() {
    let m = static_example(BoxForm::Linear);
    assert!(is_consistent(&m, &[0.5], DEFAULT_STEP, 0.0).consistent);
    let v = is_consistent(&m, &[0.1], DEFAULT_STEP, 0.0);
    assert_eq!(v.violation.unwrap().time_index, Some(1));
}

#[test]
fn sampling() {
    let vacuous = scalar("0", (0.0, 1.0));
    let s = sample_consistent(&vacuous, 200, 1, DEFAULT_STEP);
    assert_eq!(s.acceptance_rate(), 1.0);
    assert!(sample_consistent(&disjoint_example(BoxForm::Linear), 500, 2, DEFAULT_STEP).points.is_empty());
    let a = sample_consistent(&static_example(BoxForm::Linear), 300, 7, DEFAULT_STEP);
    let b = sample_consistent(&static_example(BoxForm::Linear), 300, 7, DEFAULT_STEP);
    assert_eq!(a, b);
    assert!(a.points.iter().all(|p| (0.2..=0.8).contains(&p[0])));
    assert!((a.acceptance_rate() - 0.6).abs() < 0.1);
}

#[test]
fn enzyme_samples_exist_and_stay_in_unit_square() {
    let m = enzyme_example();
    let s = sample_consistent(&m, 10_000, 11, DEFAULT_STEP);
    assert!(!s.points.is_empty());
    let x0 = s.points[0].clone();
    let t = integrate(&m, &x0, DEFAULT_STEP).unwrap();
    for x in &t.states {
        assert!((0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1]));
    }
}

#[test]
fn volumes() {
    let full = mc_volume(|_| true, &[(0.0, 1.0), (0.0, 1.0)], 1000, 3);
    assert_eq!(full, VolumeEstimate { value: 1.0, std_error: 0.0 });
    let half = mc_volume(|x| x[0] <= 0.5, &[(0.0, 1.0)], 10_000, 4);
    assert!((half.value - 0.5).abs() <= 2.0 * half.std_error + 1e-12);
    let scaled = mc_volume(|_| true, &[(0.0, 2.0), (1.0, 4.0)], 100, 5);
    assert_eq!(scaled.value, 6.0);
}

#[test]
fn csv_output() {
    let mut buf = Vec::new();
    write_points_csv(&["a".into(), "b".into()], &[vec![0.5, 1.0]], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n0.5,1\n");
    let t = integrate_field(&field(&["0"]), &[2.0], &[0.0, 1.0], 0.5).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&["x".into()], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "t,x\n0,2\n0.5,2\n1,2\n");
}
