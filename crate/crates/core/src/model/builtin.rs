//! Bundled benchmark models.

use std::collections::BTreeMap;

use super::file::{MeasurementDecl, ModelFile, VarDecl};
use super::{BoxForm, EstimationModel};
use crate::oracle::integrate;

/// Nominal `(x1, x2, p1, p2, p3)` of the enzyme model.
pub const ENZYME_NOMINAL: [f64; 5] = [0.9, 0.05, 5.05, 5.05, 5.05];

/// Half-width of every enzyme measurement interval.
pub const ENZYME_NOISE: f64 = 0.025;

/// Integration step used to generate the enzyme data.
pub const ENZYME_DATA_STEP: f64 = 1e-4;

fn var(name: &str, low: f64, high: f64) -> VarDecl {
    VarDecl { name: name.into(), low, high }
}

fn interval(pairs: &[(&str, f64, f64)]) -> MeasurementDecl {
    MeasurementDecl {
        states: pairs.iter().map(|&(n, l, h)| (n.to_string(), [l, h])).collect::<BTreeMap<_, _>>(),
        ..Default::default()
    }
}

/// Enzyme kinetics with unknown rates, states measured at `t = 0, 0.3, 1`
/// within `ENZYME_NOISE` of the nominal trajectory. The file is returned in
/// original units with measurements filled in.
pub fn enzyme_file() -> ModelFile {
    let mut file = ModelFile {
        states: vec![var("x1", 0.0, 1.0), var("x2", 0.0, 1.0)],
        parameters: vec![var("p1", 0.1, 10.0), var("p2", 0.1, 10.0), var("p3", 0.1, 10.0)],
        dynamics: vec!["-p1*x1*(1-x2) + p2*x2".into(), "p1*x1*(1-x2) - (p2+p3)*x2".into()],
        output: vec![],
        time_points: vec![0.0, 0.3, 1.0],
        terminal_time: None,
        box_form: BoxForm::Linear,
        measurements: vec![],
    };
    let raw = file.build_raw().expect("enzyme model is well formed");
    let traj = integrate(&raw, &ENZYME_NOMINAL, ENZYME_DATA_STEP).expect("nominal trajectory stays bounded");
    file.measurements = (0..raw.grid.len())
        .map(|k| {
            let x = traj.at_grid(k);
            interval(&[
                ("x1", x[0] - ENZYME_NOISE, x[0] + ENZYME_NOISE),
                ("x2", x[1] - ENZYME_NOISE, x[1] + ENZYME_NOISE),
            ])
        })
        .collect();
    file
}

/// The normalized enzyme benchmark.
pub fn enzyme_example() -> EstimationModel {
    enzyme_file().build().expect("enzyme model is well formed")
}

/// One constant state on `[0, 1]`, unconstrained at `t = 0` and in
/// `[0.2, 0.8]` at `t = 1`. The consistent set is `[0.2, 0.8]`.
pub fn static_file(form: BoxForm) -> ModelFile {
    ModelFile {
        states: vec![var("x", 0.0, 1.0)],
        parameters: vec![],
        dynamics: vec!["0".into()],
        output: vec![],
        time_points: vec![0.0, 1.0],
        terminal_time: None,
        box_form: form,
        measurements: vec![MeasurementDecl::default(), interval(&[("x", 0.2, 0.8)])],
    }
}

pub fn static_example(form: BoxForm) -> EstimationModel {
    static_file(form).build().expect("static model is well formed")
}

/// Like the static model with `X_0 = [0, 0.3]` and `X_1 = [0.7, 1]`; no
/// initial condition is consistent.
pub fn disjoint_file(form: BoxForm) -> ModelFile {
    ModelFile { measurements: vec![interval(&[("x", 0.0, 0.3)]), interval(&[("x", 0.7, 1.0)])], ..static_file(form) }
}

pub fn disjoint_example(form: BoxForm) -> EstimationModel {
    disjoint_file(form).build().expect("disjoint model is well formed")
}
