//! JSON model files.
//!
//! ```json
//! {
//!   "states": [{"name": "x1", "low": 0, "high": 1}],
//!   "parameters": [{"name": "p1", "low": 0.1, "high": 10}],
//!   "dynamics": ["-p1*x1"],
//!   "output": ["x1"],
//!   "time_points": [0, 0.3, 1],
//!   "terminal_time": 1,
//!   "box_form": "linear",
//!   "measurements": [
//!     {"states": {"x1": [0.875, 0.925]}},
//!     {"outputs": {"y1": [0.1, 0.2]}, "inequalities": ["x1 - p1/100"]}
//!   ]
//! }
//! ```
//!
//! Dynamics and outputs may use the state and parameter names and `t`;
//! measurement inequalities (`g >= 0`) may use state and parameter names.
//! Outputs are referred to as `y1, y2, ...`. Missing measurement entries are
//! vacuous. When `terminal_time` exceeds the last time point, a final point
//! constrained only by `X` is appended.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    augment_parameters, normalize, rewrite_output_constraints, BoxForm, EstimationModel, ModelError, Result, TimeGrid,
};
use crate::poly::{parse_polynomial, Polynomial, VarSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarDecl {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementDecl {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub states: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inequalities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<VarDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parameters: Vec<VarDecl>,
    pub dynamics: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output: Vec<String>,
    pub time_points: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_time: Option<f64>,
    #[serde(default)]
    pub box_form: BoxForm,
    #[serde(default)]
    pub measurements: Vec<MeasurementDecl>,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ModelError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files always serialize")
    }

    /// The model in original coordinates.
    pub fn build_raw(&self) -> Result<EstimationModel> {
        if self.states.is_empty() {
            return Err(ModelError::Invalid("at least one state is required".into()));
        }
        let mut names: Vec<String> = self.states.iter().chain(&self.parameters).map(|v| v.name.clone()).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::Invalid(format!("duplicate variable name '{}'", w[0])));
        }
        if let Some(bad) = names.iter().find(|n| *n == "t" || is_output_name(n)) {
            return Err(ModelError::Invalid(format!("'{bad}' is a reserved name")));
        }
        if self.dynamics.len() != self.states.len() {
            return Err(ModelError::Invalid(format!(
                "{} states but {} dynamics entries",
                self.states.len(),
                self.dynamics.len()
            )));
        }
        let mut points = self.time_points.clone();
        if let Some(t) = self.terminal_time {
            let last = points.last().copied().unwrap_or(0.0);
            if t > last {
                points.push(t);
            } else if t < last {
                return Err(ModelError::Invalid(format!("terminal time {t} precedes the last time point {last}")));
            }
        }
        if self.measurements.len() > points.len() {
            return Err(ModelError::Invalid(format!(
                "{} measurement entries for {} time points",
                self.measurements.len(),
                points.len()
            )));
        }
        let grid = TimeGrid::new(points)?;

        let n0 = self.states.len();
        let base = EstimationModel::new(
            self.states.iter().map(|v| v.name.clone()).collect(),
            self.states.iter().map(|v| (v.low, v.high)).collect(),
            vec![Polynomial::zero(VarSpace::states(n0)); n0],
            grid,
            self.box_form,
        )?;
        let params: Vec<(String, (f64, f64))> =
            self.parameters.iter().map(|v| (v.name.clone(), (v.low, v.high))).collect();
        let mut model = augment_parameters(&base, &params)?;
        let n = model.n_states();

        let tspace = VarSpace::with_time(n);
        let resolve_t = |s: &str| if s == "t" { Some(n) } else { model.variable(s) };
        let mut dynamics: Vec<Polynomial> = self
            .dynamics
            .iter()
            .enumerate()
            .map(|(i, src)| parse_in(src, tspace, &resolve_t, &format!("dynamics[{i}]")))
            .collect::<Result<_>>()?;
        dynamics.extend((n0..n).map(|_| Polynomial::zero(tspace)));
        let output: Vec<Polynomial> = self
            .output
            .iter()
            .enumerate()
            .map(|(i, src)| parse_in(src, tspace, &resolve_t, &format!("output[{i}]")))
            .collect::<Result<_>>()?;
        model.set_dynamics(dynamics)?;
        model.set_output(output)?;

        let space = model.space();
        let ny = model.output.len();
        for (k, m) in self.measurements.iter().enumerate() {
            for (name, &[lo, hi]) in &m.states {
                let var = model
                    .variable(name)
                    .ok_or_else(|| ModelError::Invalid(format!("unknown variable '{name}' in measurement {k}")))?;
                model.measure_state(k, var, (lo, hi))?;
            }
            let mut ys = Vec::new();
            for (name, &[lo, hi]) in &m.outputs {
                let j = output_index(name)
                    .filter(|j| *j < ny)
                    .ok_or_else(|| ModelError::Invalid(format!("unknown output '{name}' in measurement {k}")))?;
                if !(lo <= hi) {
                    return Err(ModelError::Invalid(format!("empty interval [{lo}, {hi}] for {name}")));
                }
                let y = Polynomial::var(VarSpace::states(ny), j).expect("output index");
                ys.push((format!("{name} >= {lo}"), y.add_constant(-lo)));
                ys.push((format!("{name} <= {hi}"), y.scale(-1.0).add_constant(hi)));
            }
            if !ys.is_empty() {
                model = rewrite_output_constraints(&model, k, &ys)?;
            }
            for (i, src) in m.inequalities.iter().enumerate() {
                let g = parse_in(src, space, &|s| model.variable(s), &format!("measurements[{k}].inequalities[{i}]"))?;
                model.add_measurement(k, format!("{src} >= 0"), g)?;
            }
        }
        Ok(model)
    }

    /// The normalized model.
    pub fn build(&self) -> Result<EstimationModel> {
        normalize(&self.build_raw()?)
    }
}

fn is_output_name(s: &str) -> bool {
    output_index(s).is_some()
}

fn output_index(s: &str) -> Option<usize> {
    let j: usize = s.strip_prefix('y')?.parse().ok()?;
    j.checked_sub(1)
}

fn parse_in(src: &str, space: VarSpace, resolve: &dyn Fn(&str) -> Option<usize>, context: &str) -> Result<Polynomial> {
    parse_polynomial(src, space, resolve)
        .map_err(|source| ModelError::Polynomial { context: format!("{context} \"{src}\""), source })
}

/// Parses a JSON model file and normalizes it.
pub fn parse_model(text: &str) -> Result<EstimationModel> {
    ModelFile::from_json(text)?.build()
}

pub fn load_model(path: &Path) -> Result<EstimationModel> {
    parse_model(&std::fs::read_to_string(path)?)
}
