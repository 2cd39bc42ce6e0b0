//! Estimation problems: polynomial dynamics, constraint sets at measurement
//! times, and the affine normalization to `t in [0, 1]`, `x in [0, 1]^n`.

mod builtin;
mod file;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{PolyError, Polynomial, VarSpace};

pub use builtin::{
    disjoint_example, disjoint_file, enzyme_example, enzyme_file, static_example, static_file, ENZYME_DATA_STEP,
    ENZYME_NOISE, ENZYME_NOMINAL,
};
pub use file::{load_model, parse_model, MeasurementDecl, ModelFile, VarDecl};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("model file line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("in {context}: {source}")]
    Polynomial { context: String, source: PolyError },
    #[error("state '{0}' has no finite box")]
    MissingBox(String),
    #[error("the model has no output map")]
    NoOutput,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn poly_err(context: impl Into<String>) -> impl FnOnce(PolyError) -> ModelError {
    let context = context.into();
    move |source| ModelError::Polynomial { context, source }
}

/// How interval bounds become inequalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxForm {
    /// `x - l >= 0` and `u - x >= 0`
    #[default]
    Linear,
    /// `(x - l)(u - x) >= 0`
    Quadratic,
}

/// One constraint `g(x) >= 0` with a readable label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub label: String,
    pub poly: Polynomial,
}

/// `{x : g_i(x) >= 0 for all i}` over state variables.
///
/// The first `inherited` inequalities are copies of the global set `X`, so
/// `X_k` is a subset of `X` by construction. `bounds` is the box of `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    pub space: VarSpace,
    pub inequalities: Vec<Inequality>,
    pub inherited: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl SemialgebraicSet {
    pub fn new(space: VarSpace, bounds: Vec<(f64, f64)>) -> Self {
        Self { space, inequalities: Vec::new(), inherited: 0, bounds }
    }

    /// The inequalities that are not inherited from `X`.
    pub fn own(&self) -> &[Inequality] {
        &self.inequalities[self.inherited..]
    }

    pub fn polys(&self) -> impl Iterator<Item = &Polynomial> {
        self.inequalities.iter().map(|g| &g.poly)
    }

    /// `g_i(x)` for every inequality.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.inequalities.iter().map(|g| g.poly.evaluate(x).unwrap_or(f64::NAN)).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.margins(x).iter().all(|m| *m >= -tol)
    }

    pub fn max_degree(&self) -> u32 {
        self.polys().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// `bounds` tightened by every univariate linear or concave quadratic
    /// inequality. May be empty (`lo > hi`) when those contradict.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut out = self.bounds.clone();
        for g in self.polys() {
            let Some((var, c)) = univariate(g) else { continue };
            let (lo, hi) = &mut out[var];
            let [c0, c1, c2] = c;
            if c2 == 0.0 {
                if c1 > 0.0 {
                    *lo = lo.max(-c0 / c1);
                } else if c1 < 0.0 {
                    *hi = hi.min(-c0 / c1);
                }
            } else if c2 < 0.0 {
                let disc = c1 * c1 - 4.0 * c2 * c0;
                if disc < 0.0 {
                    *hi = *lo - 1.0;
                    continue;
                }
                let r = disc.sqrt();
                let (r1, r2) = ((-c1 + r) / (2.0 * c2), (-c1 - r) / (2.0 * c2));
                *lo = lo.max(r1.min(r2));
                *hi = hi.min(r1.max(r2));
            }
        }
        out
    }

    fn push(&mut self, label: impl Into<String>, poly: Polynomial) {
        self.inequalities.push(Inequality { label: label.into(), poly });
    }
}

/// `(var, [c0, c1, c2])` when `g` depends on a single variable with degree <= 2.
fn univariate(g: &Polynomial) -> Option<(usize, [f64; 3])> {
    let mut var = None;
    let mut c = [0.0; 3];
    for (m, coef) in g.terms() {
        if m.degree() > 2 {
            return None;
        }
        for (i, &e) in m.exponents().iter().enumerate() {
            if e > 0 {
                if var.is_some_and(|v| v != i) {
                    return None;
                }
                var = Some(i);
            }
        }
        c[m.degree() as usize] += coef;
    }
    var.map(|v| (v, c))
}

/// Interval bound inequalities for variable `var` of `space`.
pub fn interval_inequalities(
    space: VarSpace,
    var: usize,
    name: &str,
    (lo, hi): (f64, f64),
    form: BoxForm,
) -> Vec<Inequality> {
    let x = Polynomial::var(space, var).expect("variable index in range");
    let lower = x.add_constant(-lo);
    let upper = x.scale(-1.0).add_constant(hi);
    match form {
        BoxForm::Linear => vec![
            Inequality { label: format!("{name} >= {lo}"), poly: lower },
            Inequality { label: format!("{name} <= {hi}"), poly: upper },
        ],
        BoxForm::Quadratic => {
            vec![Inequality { label: format!("{name} in [{lo}, {hi}]"), poly: lower.mul(&upper).expect("degree 2") }]
        }
    }
}

/// Measurement times `0 = t_0 < ... < t_{m-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(ModelError::Invalid("at least two time points are required".into()));
        }
        if points[0] != 0.0 {
            return Err(ModelError::Invalid("the first time point must be 0".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::Invalid("time points must be finite and strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn terminal(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// `(t_k, t_{k+1})` pairs.
    pub fn arcs(&self) -> Vec<(f64, f64)> {
        self.points.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine map between original and scaled coordinates:
/// `x = offset + factor * x_scaled`, `t = time_factor * t_scaled`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub offset: Vec<f64>,
    pub factor: Vec<f64>,
    pub time_factor: f64,
}

impl Scaling {
    pub fn identity(n: usize) -> Self {
        Self { offset: vec![0.0; n], factor: vec![1.0; n], time_factor: 1.0 }
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.offset).zip(&self.factor).map(|((v, o), f)| (v - o) / f).collect()
    }

    pub fn to_original(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.offset).zip(&self.factor).map(|((v, o), f)| o + f * v).collect()
    }

    fn then(&self, inner: &Scaling) -> Scaling {
        // self maps original -> A, inner maps A -> B
        Scaling {
            offset: self.offset.iter().zip(&self.factor).zip(&inner.offset).map(|((o, f), oi)| o + f * oi).collect(),
            factor: self.factor.iter().zip(&inner.factor).map(|(f, fi)| f * fi).collect(),
            time_factor: self.time_factor * inner.time_factor,
        }
    }
}

/// A set-membership estimation problem.
///
/// `measurements[k]` is the set `X_k` the state must lie in at `grid.points[k]`;
/// `measurements[0]` is the prior set of initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationModel {
    pub names: Vec<String>,
    /// Number of leading states that are parameters appended by
    /// [`augment_parameters`] (they sit at the end of the state vector).
    pub n_parameters: usize,
    /// `f(t, x)`, one component per state, over `VarSpace::with_time(n)`.
    pub dynamics: Vec<Polynomial>,
    /// `h(t, x)` over `VarSpace::with_time(n)`; empty when there is no output map.
    pub output: Vec<Polynomial>,
    pub global: SemialgebraicSet,
    pub measurements: Vec<SemialgebraicSet>,
    pub grid: TimeGrid,
    pub scaling: Scaling,
    pub box_form: BoxForm,
}

impl EstimationModel {
    /// A model with box `X`, the given dynamics and no measurements beyond `X`.
    pub fn new(
        names: Vec<String>,
        bounds: Vec<(f64, f64)>,
        dynamics: Vec<Polynomial>,
        grid: TimeGrid,
        box_form: BoxForm,
    ) -> Result<Self> {
        let n = names.len();
        if bounds.len() != n || dynamics.len() != n {
            return Err(ModelError::Invalid(format!(
                "{n} states but {} boxes and {} dynamics",
                bounds.len(),
                dynamics.len()
            )));
        }
        let space = VarSpace::states(n);
        let dynamics = dynamics
            .iter()
            .map(|f| f.embed(VarSpace::with_time(n)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(poly_err("dynamics"))?;
        for (name, &(lo, hi)) in names.iter().zip(&bounds) {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(ModelError::MissingBox(name.clone()));
            }
            if !(lo < hi) {
                return Err(ModelError::Invalid(format!("empty box [{lo}, {hi}] for '{name}'")));
            }
        }
        let mut global = SemialgebraicSet::new(space, bounds.clone());
        for (i, name) in names.iter().enumerate() {
            for g in interval_inequalities(space, i, name, bounds[i], box_form) {
                global.inequalities.push(g);
            }
        }
        let measurements = (0..grid.len())
            .map(|_| {
                let mut m = global.clone();
                m.inherited = m.inequalities.len();
                m
            })
            .collect();
        Ok(Self {
            names,
            n_parameters: 0,
            dynamics,
            output: Vec::new(),
            global,
            measurements,
            grid,
            scaling: Scaling::identity(n),
            box_form,
        })
    }

    pub fn n_states(&self) -> usize {
        self.names.len()
    }

    pub fn space(&self) -> VarSpace {
        VarSpace::states(self.n_states())
    }

    /// The `(x, t)` space of dynamics and arc polynomials.
    pub fn time_space(&self) -> VarSpace {
        VarSpace::with_time(self.n_states())
    }

    /// Replaces the vector field; components may be over `x` or `(x, t)`.
    pub fn set_dynamics(&mut self, dynamics: Vec<Polynomial>) -> Result<()> {
        self.dynamics = lift_field(dynamics, self.n_states(), "dynamics")?;
        Ok(())
    }

    /// Sets the output map `h`; components may be over `x` or `(x, t)`.
    pub fn set_output(&mut self, output: Vec<Polynomial>) -> Result<()> {
        let n = self.n_states();
        self.output = output
            .into_iter()
            .map(|h| h.embed(VarSpace::with_time(n)).map_err(poly_err("output map")))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.global.bounds
    }

    pub fn variable(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Adds `g >= 0` to `X_k` (not inherited).
    pub fn add_measurement(&mut self, k: usize, label: impl Into<String>, g: Polynomial) -> Result<()> {
        if g.space() != self.space() {
            return Err(ModelError::Invalid(format!("inequality over {} instead of {}", g.space(), self.space())));
        }
        let set = self.measurements.get_mut(k).ok_or_else(|| ModelError::Invalid(format!("no time point {k}")))?;
        set.push(label, g);
        Ok(())
    }

    /// Interval measurement of one state at time point `k`.
    pub fn measure_state(&mut self, k: usize, var: usize, interval: (f64, f64)) -> Result<()> {
        if !(interval.0 <= interval.1) {
            return Err(ModelError::Invalid(format!("empty interval [{}, {}]", interval.0, interval.1)));
        }
        let name = self.names[var].clone();
        for g in interval_inequalities(self.space(), var, &name, interval, self.box_form) {
            self.add_measurement(k, g.label, g.poly)?;
        }
        Ok(())
    }

    /// Degree of the vector field.
    pub fn dynamics_degree(&self) -> u32 {
        self.dynamics.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Largest degree among the dynamics and all constraint polynomials.
    pub fn max_degree(&self) -> u32 {
        self.measurements
            .iter()
            .map(SemialgebraicSet::max_degree)
            .chain([self.global.max_degree(), self.dynamics_degree()])
            .max()
            .unwrap_or(0)
    }

    /// True when the time horizon and every state box are already `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.grid.terminal() == 1.0 && self.bounds().iter().all(|&(l, u)| l == 0.0 && u == 1.0)
    }

    /// Consistency checks on the representation.
    pub fn validate(&self) -> Result<()> {
        let space = self.space();
        if self.measurements.len() != self.grid.len() {
            return Err(ModelError::Invalid(format!(
                "{} measurement sets for {} time points",
                self.measurements.len(),
                self.grid.len()
            )));
        }
        for (k, m) in self.measurements.iter().enumerate() {
            if m.space != space || m.inherited < self.global.inequalities.len() {
                return Err(ModelError::Invalid(format!("measurement set {k} does not extend X")));
            }
            if m.inequalities[..self.global.inequalities.len()] != self.global.inequalities[..] {
                return Err(ModelError::Invalid(format!("measurement set {k} does not start with X")));
            }
        }
        Ok(())
    }
}

fn lift_field(field: Vec<Polynomial>, n: usize, what: &str) -> Result<Vec<Polynomial>> {
    if field.len() != n {
        return Err(ModelError::Invalid(format!("{n} states but {} {what} components", field.len())));
    }
    field.into_iter().map(|f| f.embed(VarSpace::with_time(n)).map_err(poly_err(what.to_string()))).collect()
}

/// Re-expresses `p` over `target` keeping variable indices (states first, then
/// time). `target` must have at least as many states.
fn lift(p: &Polynomial, target: VarSpace) -> Polynomial {
    let src = p.space();
    let mut bind = BTreeMap::new();
    for i in 0..src.n_states {
        bind.insert(i, Polynomial::var(target, i).expect("state index"));
    }
    if let (Some(ts), Some(tt)) = (src.time_index(), target.time_index()) {
        bind.insert(ts, Polynomial::var(target, tt).expect("time index"));
    }
    p.substitute(target, &bind).expect("variable renaming cannot raise the degree")
}

/// Appends one constant state per parameter, bounded by its interval in `X`
/// (and hence in every `X_k`).
pub fn augment_parameters(model: &EstimationModel, parameters: &[(String, (f64, f64))]) -> Result<EstimationModel> {
    if parameters.is_empty() {
        return Ok(model.clone());
    }
    for (name, (lo, hi)) in parameters {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::Invalid(format!("bad bounds [{lo}, {hi}] for parameter '{name}'")));
        }
        if model.variable(name).is_some() {
            return Err(ModelError::Invalid(format!("duplicate variable name '{name}'")));
        }
    }
    let n0 = model.n_states();
    let n = n0 + parameters.len();
    let space = VarSpace::states(n);
    let lift_set = |set: &SemialgebraicSet| SemialgebraicSet {
        space,
        inequalities: set
            .inequalities
            .iter()
            .map(|g| Inequality { label: g.label.clone(), poly: lift(&g.poly, space) })
            .collect(),
        inherited: set.inherited,
        bounds: set.bounds.clone(),
    };
    let mut global = lift_set(&model.global);
    let mut measurements: Vec<SemialgebraicSet> = model.measurements.iter().map(lift_set).collect();
    let mut new_ineqs = Vec::new();
    for (j, (name, b)) in parameters.iter().enumerate() {
        global.bounds.push(*b);
        new_ineqs.extend(interval_inequalities(space, n0 + j, name, *b, model.box_form));
    }
    let at = global.inequalities.len();
    global.inequalities.extend(new_ineqs.iter().cloned());
    for m in &mut measurements {
        m.bounds = global.bounds.clone();
        let own = m.inequalities.split_off(at);
        m.inequalities.extend(new_ineqs.iter().cloned());
        m.inherited = global.inequalities.len();
        m.inequalities.extend(own);
    }
    let mut names = model.names.clone();
    names.extend(parameters.iter().map(|(n, _)| n.clone()));
    let tspace = VarSpace::with_time(n);
    let mut dynamics: Vec<Polynomial> = model.dynamics.iter().map(|f| lift(f, tspace)).collect();
    dynamics.extend((0..parameters.len()).map(|_| Polynomial::zero(tspace)));
    let mut scaling = model.scaling.clone();
    scaling.offset.extend(std::iter::repeat_n(0.0, parameters.len()));
    scaling.factor.extend(std::iter::repeat_n(1.0, parameters.len()));
    Ok(EstimationModel {
        names,
        n_parameters: model.n_parameters + parameters.len(),
        dynamics,
        output: model.output.iter().map(|h| lift(h, tspace)).collect(),
        global,
        measurements,
        grid: model.grid.clone(),
        scaling,
        box_form: model.box_form,
    })
}

/// Scales `g` so its largest coefficient has magnitude one.
fn unit_coefficients(g: &Polynomial) -> Polynomial {
    let m = g.max_abs_coefficient();
    if m > 0.0 {
        g.scale(1.0 / m)
    } else {
        g.clone()
    }
}

/// Maps time to `[0, 1]` and every state box to `[0, 1]`.
///
/// Dynamics follow the chain rule, `f~_i(x~) = T / (u_i - l_i) * f_i(l + (u - l) x~)`;
/// inequalities are composed with the same map and rescaled to unit
/// largest coefficient. The accumulated map is kept in `scaling`.
pub fn normalize(model: &EstimationModel) -> Result<EstimationModel> {
    model.validate()?;
    let space = model.space();
    let bounds = model.bounds().to_vec();
    for (name, &(lo, hi)) in model.names.iter().zip(&bounds) {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::MissingBox(name.clone()));
        }
    }
    let horizon = model.grid.terminal();
    let step = Scaling {
        offset: bounds.iter().map(|b| b.0).collect(),
        factor: bounds.iter().map(|b| b.1 - b.0).collect(),
        time_factor: horizon,
    };
    let tspace = VarSpace::with_time(space.n_states);
    let affine = |target: VarSpace| {
        let mut bind = BTreeMap::new();
        for i in 0..space.n_states {
            let xi = Polynomial::var(target, i).expect("state index");
            bind.insert(i, xi.scale(step.factor[i]).add_constant(step.offset[i]));
        }
        if let Some(t) = target.time_index() {
            bind.insert(t, Polynomial::var(target, t).expect("time index").scale(horizon));
        }
        bind
    };
    let (bind, tbind) = (affine(space), affine(tspace));
    let compose = |p: &Polynomial, what: &str| p.substitute(space, &bind).map_err(poly_err(what.to_string()));
    let compose_t = |p: &Polynomial, what: &str| p.substitute(tspace, &tbind).map_err(poly_err(what.to_string()));
    let map_set = |set: &SemialgebraicSet| -> Result<SemialgebraicSet> {
        let mut inequalities = Vec::with_capacity(set.inequalities.len());
        for g in &set.inequalities {
            inequalities
                .push(Inequality { label: g.label.clone(), poly: unit_coefficients(&compose(&g.poly, &g.label)?) });
        }
        Ok(SemialgebraicSet { space, inequalities, inherited: set.inherited, bounds: vec![(0.0, 1.0); space.n_states] })
    };
    let mut dynamics = Vec::with_capacity(space.n_states);
    for (i, f) in model.dynamics.iter().enumerate() {
        dynamics.push(compose_t(f, &format!("dynamics of {}", model.names[i]))?.scale(horizon / step.factor[i]));
    }
    let output = model.output.iter().map(|h| compose_t(h, "output map")).collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::new(model.grid.points.iter().map(|t| t / horizon).collect())?;
    let mut grid = grid;
    *grid.points.last_mut().unwrap() = 1.0;
    Ok(EstimationModel {
        names: model.names.clone(),
        n_parameters: model.n_parameters,
        dynamics,
        output,
        global: map_set(&model.global)?,
        measurements: model.measurements.iter().map(map_set).collect::<Result<_>>()?,
        grid,
        scaling: model.scaling.then(&step),
        box_form: model.box_form,
    })
}

/// Composes output inequalities `g_y(y) >= 0` with the output map `h` at
/// time `t_k` and appends them to `X_k`. Each `g_y` is over `VarSpace::states(h.len())`.
pub fn rewrite_output_constraints(
    model: &EstimationModel,
    k: usize,
    output_inequalities: &[(String, Polynomial)],
) -> Result<EstimationModel> {
    if model.output.is_empty() {
        return Err(ModelError::NoOutput);
    }
    let ny = model.output.len();
    let t = *model.grid.points.get(k).ok_or_else(|| ModelError::Invalid(format!("no time point {k}")))?;
    let bind: BTreeMap<usize, Polynomial> = model
        .output
        .iter()
        .map(|h| h.at_time(t))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(poly_err("output map"))?
        .into_iter()
        .enumerate()
        .collect();
    let mut out = model.clone();
    for (label, gy) in output_inequalities {
        if gy.space() != VarSpace::states(ny) {
            return Err(ModelError::Invalid(format!("output inequality '{label}' is not over the {ny} outputs")));
        }
        let g = gy.substitute(model.space(), &bind).map_err(poly_err(label.clone()))?;
        out.add_measurement(k, label.clone(), g)?;
    }
    Ok(out)
}
