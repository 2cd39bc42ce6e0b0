//! Ground truth by simulation: fixed-step RK4, consistency checks against the
//! constraint sets, seeded sampling and Monte-Carlo volumes.
//!
//! Sampling uses `ChaCha8Rng::seed_from_u64(seed)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EstimationModel;
use crate::poly::{CompiledPolynomial, Polynomial};

/// Default integration step in normalized time.
pub const DEFAULT_STEP: f64 = 1e-3;

/// States whose norm exceeds this are reported as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("step must lie in (0, 1], got {0}")]
    InvalidStep(f64),
    #[error("expected {expected} initial values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("initial state is not finite")]
    NonFinite,
    #[error("trajectory diverged at t = {time}")]
    Divergence { time: f64 },
}

/// A sampled solution: `states[j]` is the state at `times[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `grid_nodes[k]` is the row holding measurement time `t_k`.
    pub grid_nodes: Vec<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories are never empty")
    }

    /// State at measurement time `t_k`.
    pub fn at_grid(&self, k: usize) -> &[f64] {
        &self.states[self.grid_nodes[k]]
    }

    /// CSV with header `t,<names>`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,{}", names.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

struct Field {
    f: Vec<CompiledPolynomial>,
    buf: Vec<f64>,
}

impl Field {
    fn new(f: &[Polynomial]) -> Self {
        let n = f.len();
        Self { f: f.iter().map(Polynomial::compile).collect(), buf: vec![0.0; n + 1] }
    }

    fn eval(&mut self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        self.buf[..n].copy_from_slice(x);
        self.buf[n] = t;
        for (o, f) in out.iter_mut().zip(&self.f) {
            *o = f.eval(&self.buf);
        }
    }
}

/// Integrates `x' = f(t, x)` from `points[0]` through every entry of `points`
/// with RK4. Each gap is split into `ceil(gap / step)` equal substeps so every
/// point is a node. `field` components are over `(x, t)`.
pub fn integrate_field(field: &[Polynomial], x0: &[f64], points: &[f64], step: f64) -> Result<Trajectory, OracleError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(OracleError::InvalidStep(step));
    }
    let n = field.len();
    if x0.len() != n {
        return Err(OracleError::Dimension { expected: n, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::NonFinite);
    }
    let mut rhs = Field::new(field);
    let mut x = x0.to_vec();
    let mut times = vec![points[0]];
    let mut states = vec![x.clone()];
    let mut grid_nodes = vec![0];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for w in points.windows(2) {
        let gap = w[1] - w[0];
        let substeps = ((gap / step) - 1e-9).ceil().max(1.0) as usize;
        let h = gap / substeps as f64;
        for j in 0..substeps {
            let t = w[0] + j as f64 * h;
            rhs.eval(t, &x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + h * k3[i];
            }
            rhs.eval(t + h, &tmp, &mut k4);
            for i in 0..n {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let t_next = if j + 1 == substeps { w[1] } else { t + h };
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= DIVERGENCE_LIMIT) {
                return Err(OracleError::Divergence { time: t_next });
            }
            times.push(t_next);
            states.push(x.clone());
        }
        grid_nodes.push(states.len() - 1);
    }
    Ok(Trajectory { x0: x0.to_vec(), times, states, grid_nodes })
}

/// Trajectory of `model` through its time grid.
pub fn integrate(model: &EstimationModel, x0: &[f64], step: f64) -> Result<Trajectory, OracleError> {
    integrate_field(&model.dynamics, x0, &model.grid.points, step)
}

/// Where a trajectory first breaks a constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    /// Measurement index when the broken constraint belongs to `X_k`.
    pub time_index: Option<usize>,
    pub constraint: String,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub violation: Option<Violation>,
}

impl ConsistencyVerdict {
    fn fail(time: f64, time_index: Option<usize>, constraint: String, margin: f64) -> Self {
        Self { consistent: false, violation: Some(Violation { time, time_index, constraint, margin }) }
    }
}

/// Compiled constraint sets of a model for repeated checks.
pub struct Checker<'a> {
    model: &'a EstimationModel,
    global: Vec<CompiledPolynomial>,
    measurements: Vec<Vec<CompiledPolynomial>>,
}

impl<'a> Checker<'a> {
    pub fn new(model: &'a EstimationModel) -> Self {
        Self {
            model,
            global: model.global.polys().map(Polynomial::compile).collect(),
            measurements: model
                .measurements
                .iter()
                .map(|m| m.own().iter().map(|g| g.poly.compile()).collect())
                .collect(),
        }
    }

    /// Checks `X` at every node and `X_k` at every `t_k`.
    pub fn check(&self, x0: &[f64], step: f64, tol_margin: f64) -> ConsistencyVerdict {
        let model = self.model;
        // cheap rejection before integrating
        for (g, c) in model.measurements[0].own().iter().zip(&self.measurements[0]) {
            let m = c.eval(x0);
            if !(m >= -tol_margin) {
                return ConsistencyVerdict::fail(model.grid.points[0], Some(0), g.label.clone(), m);
            }
        }
        let traj = match integrate(model, x0, step) {
            Ok(t) => t,
            Err(OracleError::Divergence { time }) => {
                return ConsistencyVerdict::fail(time, None, "divergence".into(), f64::NEG_INFINITY)
            }
            Err(e) => return ConsistencyVerdict::fail(0.0, None, e.to_string(), f64::NAN),
        };
        let mut next_grid = 0;
        for (row, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
            for (g, c) in model.global.inequalities.iter().zip(&self.global) {
                let m = c.eval(x);
                if !(m >= -tol_margin) {
                    return ConsistencyVerdict::fail(*t, None, g.label.clone(), m);
                }
            }
            if next_grid < traj.grid_nodes.len() && traj.grid_nodes[next_grid] == row {
                let k = next_grid;
                next_grid += 1;
                for (g, c) in model.measurements[k].own().iter().zip(&self.measurements[k]) {
                    let m = c.eval(x);
                    if !(m >= -tol_margin) {
                        return ConsistencyVerdict::fail(*t, Some(k), g.label.clone(), m);
                    }
                }
            }
        }
        ConsistencyVerdict { consistent: true, violation: None }
    }
}

/// Whether the trajectory from `x0` satisfies every constraint of `model`.
pub fn is_consistent(model: &EstimationModel, x0: &[f64], step: f64, tol_margin: f64) -> ConsistencyVerdict {
    Checker::new(model).check(x0, step, tol_margin)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub seed: u64,
    pub attempts: usize,
    pub points: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn acceptance_rate(&self) -> f64 {
        self.points.len() as f64 / self.attempts as f64
    }
}

/// Uniform point in `bounds`.
pub fn uniform_point<R: Rng>(rng: &mut R, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(l, u)| l + (u - l) * rng.random::<f64>()).collect()
}

/// Draws `n_attempts` uniform points from the box of `X_0` and keeps the
/// consistent ones.
pub fn sample_consistent(model: &EstimationModel, n_attempts: usize, seed: u64, step: f64) -> SampleSet {
    let checker = Checker::new(model);
    let bounds = model.measurements[0].bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for _ in 0..n_attempts {
        let x = uniform_point(&mut rng, &bounds);
        if checker.check(&x, step, 0.0).consistent {
            points.push(x);
        }
    }
    SampleSet { seed, attempts: n_attempts, points }
}

/// Points as CSV with a header row.
pub fn write_points_csv<W: Write>(names: &[String], points: &[Vec<f64>], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", names.join(","))?;
    for p in points {
        let row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Monte-Carlo estimate with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Volume of `{x in box : predicate(x)}` from `n` uniform samples.
pub fn mc_volume(predicate: impl Fn(&[f64]) -> bool, bounds: &[(f64, f64)], n: usize, seed: u64) -> VolumeEstimate {
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n).filter(|_| predicate(&uniform_point(&mut rng, bounds))).count();
    let volume: f64 = bounds.iter().map(|(l, u)| u - l).product();
    let p = hits as f64 / n as f64;
    VolumeEstimate { value: p * volume, std_error: volume * (p * (1.0 - p) / n as f64).sqrt() }
}

#[cfg(test)]
mod tests;
