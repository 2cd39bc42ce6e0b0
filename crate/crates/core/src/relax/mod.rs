//! Outer approximations, violation sets, inner approximations and
//! inconsistency certificates for a normalized [`EstimationModel`].
//!
//! With arcs `[t_k, t_{k+1}]`, decision polynomials `v0(x)` and `v_k(t, x)`,
//! the outer program minimizes the integral of `v0` over the unit box subject to
//!
//! ```text
//! v0 >= 0                         on X
//! v0 - 1 - v_0(0, .) >= 0         on X_0
//! v_{k-1}(t_k, .) - v_k(t_k, .) >= 0  on X_k,  0 < k < m - 1
//! v_{m-2}(1, .) >= 0              on X_{m-1}
//! -L v_k >= 0                     on [0, 1] x X (times t(1 - t) or the arc's own interval)
//! ```
//!
//! Every constraint is certified only up to a slack computed from the
//! verified residuals, and the slacks add up to `delta`. Any consistent
//! initial condition then satisfies `v0 >= 1 - delta`, which is the emitted
//! threshold.
//!
//! The certificate program drops `v0`, asks for `-1 - v_0(0, .) >= 0` on `X_0`
//! and keeps the remaining constraints. Chaining them along a consistent
//! trajectory gives `-1 >= -delta`, so a solution with `delta < 1` proves that
//! nothing is consistent.

mod inner;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use inner::{
    inner_from_outers, solve_violation, solve_violations, violation_schedule, InnerApproximation, ViolationIndex,
    ViolationResult,
};

use crate::model::{EstimationModel, Inequality, Scaling};
use crate::poly::{PolyError, Polynomial, VarSpace};
use crate::sdp::{self, SdpError, SolverOptions, Status};
use crate::sos::{
    lebesgue_moments, Domain, SosError, SosProgram, SosProgramBuilder, VerificationReport, TOL_EQ, TOL_PSD,
};

/// Default slack for strict inequalities, in normalized units.
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_TRACE_WEIGHT: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("the model must be normalized first")]
    NotNormalized,
    #[error("order {order} is below the minimum {minimum} for this model")]
    OrderTooLow { order: u32, minimum: u32 },
    #[error("no violation index ({kappa}, {eta})")]
    BadIndex { kappa: usize, eta: usize },
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("solver finished with status {0}")]
    Solver(String),
    #[error("verification failed: residual {residual:e}, min eigenvalue {min_eigenvalue:e}")]
    Rejected { residual: f64, min_eigenvalue: f64 },
    #[error("missing result for violation index ({kappa}, {eta})")]
    MissingViolation { kappa: usize, eta: usize },
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

pub type Result<T> = std::result::Result<T, RelaxError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxOptions {
    pub order: u32,
    /// Use `(t - t_k)(t_{k+1} - t)` instead of `t(1 - t)` for arc `k`.
    pub localize_arcs: bool,
    pub epsilon: f64,
    /// Weight of the Gram trace added to the objective.
    #[serde(default = "default_trace_weight")]
    pub trace_weight: f64,
}

fn default_trace_weight() -> f64 {
    DEFAULT_TRACE_WEIGHT
}

impl RelaxOptions {
    pub fn new(order: u32) -> Self {
        Self { order, localize_arcs: false, epsilon: DEFAULT_EPSILON, trace_weight: DEFAULT_TRACE_WEIGHT }
    }
}

/// Smallest order whose degree budget covers the dynamics and all constraints.
pub fn minimum_order(model: &EstimationModel) -> u32 {
    model.max_degree().max(2).div_ceil(2)
}

/// Degree of the arc polynomials: `L v_k` must fit into the budget `2d`.
pub fn arc_degree(order: u32, dynamics_degree: u32) -> u32 {
    (2 * order).min(2 * order + 1 - dynamics_degree.max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProgramKind {
    Outer,
    Violation { kappa: usize, eta: usize },
    Certificate,
}

/// What a constraint contributes to the soundness slack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Nonnegative,
    Initial,
    Link(usize),
    Terminal,
    Arc(usize),
}

/// An assembled estimation program.
pub struct EstimationProgram {
    pub kind: ProgramKind,
    pub options: RelaxOptions,
    pub arc_degree: u32,
    pub sos: SosProgram,
    pub roles: Vec<Role>,
    pub grid: Vec<f64>,
    /// The set `X_0` used by the program; emitted sets are intersected with it.
    pub prior: Vec<Inequality>,
    pub scaling: Scaling,
    pub names: Vec<String>,
    /// Label of the flipped inequality of a violation program.
    pub violated: Option<String>,
}

struct Sets {
    ineqs: Vec<Vec<Inequality>>,
    bounds: Vec<Vec<(f64, f64)>>,
}

fn check(model: &EstimationModel, options: &RelaxOptions) -> Result<()> {
    if !model.is_normalized() {
        return Err(RelaxError::NotNormalized);
    }
    let minimum = minimum_order(model);
    if options.order < minimum {
        return Err(RelaxError::OrderTooLow { order: options.order, minimum });
    }
    Ok(())
}

fn model_sets(model: &EstimationModel) -> Sets {
    Sets {
        ineqs: model.measurements.iter().map(|m| m.inequalities.clone()).collect(),
        bounds: model.measurements.iter().map(|m| m.bounding_box()).collect(),
    }
}

/// The outer approximation program.
pub fn build_outer_program(model: &EstimationModel, options: &RelaxOptions) -> Result<EstimationProgram> {
    check(model, options)?;
    assemble(model, model_sets(model), options, ProgramKind::Outer)
}

/// The outer approximation of the initial conditions whose trajectory
/// satisfies `X_k` for `k < kappa` and violates inequality `eta` of
/// `X_kappa` by at least `epsilon`.
pub fn build_violation_program(
    model: &EstimationModel,
    index: ViolationIndex,
    options: &RelaxOptions,
) -> Result<EstimationProgram> {
    check(model, options)?;
    if !(options.epsilon > 0.0) {
        return Err(RelaxError::BadEpsilon);
    }
    let ViolationIndex { kappa, eta } = index;
    let target = model
        .measurements
        .get(kappa)
        .and_then(|m| m.inequalities.get(eta))
        .ok_or(RelaxError::BadIndex { kappa, eta })?;
    let mut sets = model_sets(model);
    let global = &model.global;
    for k in kappa..model.grid.len() {
        sets.ineqs[k] = global.inequalities.clone();
        sets.bounds[k] = global.bounding_box();
    }
    let flipped = Inequality {
        label: format!("not ({})", target.label),
        poly: target.poly.scale(-1.0).add_constant(-options.epsilon),
    };
    sets.ineqs[kappa].push(flipped);
    let mut set = global.clone();
    set.inequalities = sets.ineqs[kappa].clone();
    sets.bounds[kappa] = set.bounding_box();
    let mut program = assemble(model, sets, options, ProgramKind::Violation { kappa, eta })?;
    program.violated = Some(target.label.clone());
    Ok(program)
}

/// The inconsistency certificate program (zero objective).
pub fn build_certificate_program(model: &EstimationModel, options: &RelaxOptions) -> Result<EstimationProgram> {
    check(model, options)?;
    assemble(model, model_sets(model), options, ProgramKind::Certificate)
}

fn assemble(
    model: &EstimationModel,
    sets: Sets,
    options: &RelaxOptions,
    kind: ProgramKind,
) -> Result<EstimationProgram> {
    let d = options.order;
    let n = model.n_states();
    let space = VarSpace::states(n);
    let tspace = VarSpace::with_time(n);
    let t_index = n;
    let dv = arc_degree(d, model.dynamics_degree());
    let points = &model.grid.points;
    let m = points.len();
    let mut b = SosProgramBuilder::new();
    let mut roles = Vec::new();
    let certificate = kind == ProgramKind::Certificate;
    if !certificate {
        b.set_trace_weight(options.trace_weight);
    }

    let v0 = (!certificate).then(|| b.add_poly("v0", space, 2 * d));
    let arcs: Vec<_> = (0..m - 1).map(|k| b.add_poly(format!("arc{k}"), tspace, dv)).collect();
    let domain = |k: usize| Domain { space, inequalities: sets.ineqs[k].clone(), bounds: sets.bounds[k].clone() };

    if let Some(v0) = &v0 {
        let global =
            Domain { space, inequalities: model.global.inequalities.clone(), bounds: model.global.bounding_box() };
        b.putinar("v0 >= 0 on X", v0.affine(), global, None, d)?;
        roles.push(Role::Nonnegative);
        let l = lebesgue_moments(&vec![(0.0, 1.0); n], 2 * d)?;
        b.add_objective(v0, &l.values);
    }

    let start = arcs[0].affine().at_time(points[0])?;
    let initial = match &v0 {
        Some(v0) => v0.affine().sub(&start)?.add_poly(&Polynomial::constant(space, -1.0))?,
        None => start.scale(-1.0).add_poly(&Polynomial::constant(space, -1.0))?,
    };
    let name = if certificate { "-1 - arc0(t0) >= 0 on X_0" } else { "v0 - 1 - arc0(t0) >= 0 on X_0" };
    b.putinar(name, initial, domain(0), None, d)?;
    roles.push(Role::Initial);

    for k in 1..m - 1 {
        let link = arcs[k - 1].affine().at_time(points[k])?.sub(&arcs[k].affine().at_time(points[k])?)?;
        b.putinar(format!("arc{}(t{k}) - arc{k}(t{k}) >= 0 on X_{k}", k - 1), link, domain(k), None, d)?;
        roles.push(Role::Link(k));
    }

    let last = arcs[m - 2].affine().at_time(points[m - 1])?;
    b.putinar(format!("arc{}(t{}) >= 0 on X_{}", m - 2, m - 1, m - 1), last, domain(m - 1), None, d)?;
    roles.push(Role::Terminal);

    let t = Polynomial::var(tspace, t_index).expect("time index");
    for (k, arc) in arcs.iter().enumerate() {
        let (a, e) = if options.localize_arcs { (points[k], points[k + 1]) } else { (0.0, 1.0) };
        let tau = t.add_constant(-a).mul(&t.scale(-1.0).add_constant(e)).expect("degree 2");
        let tau = Inequality { label: format!("(t - {a})({e} - t)"), poly: tau };
        let mut inequalities = Vec::with_capacity(model.global.inequalities.len());
        for g in &model.global.inequalities {
            inequalities.push(Inequality { label: g.label.clone(), poly: g.poly.embed(tspace)? });
        }
        let mut bounds = model.global.bounding_box();
        bounds.push((points[k], points[k + 1]));
        let target = arc.affine().liouville(&model.dynamics)?.scale(-1.0);
        b.putinar(format!("-L arc{k} >= 0"), target, Domain { space: tspace, inequalities, bounds }, Some(tau), d)?;
        roles.push(Role::Arc(k));
    }

    Ok(EstimationProgram {
        kind,
        options: *options,
        arc_degree: dv,
        sos: b.build()?,
        roles,
        grid: points.clone(),
        prior: sets.ineqs[0].clone(),
        scaling: model.scaling.clone(),
        names: model.names.clone(),
        violated: None,
    })
}

/// Integral of `v0` over the unit box.
fn unit_box_integral(v0: &Polynomial, order: u32) -> Result<f64> {
    let l = lebesgue_moments(&vec![(0.0, 1.0); v0.space().n_states], 2 * order)?;
    Ok(l.basis.iter().zip(&l.values).map(|(m, w)| v0.coefficient(m) * w).sum())
}

/// A solved program and its verification.
pub struct ProgramResult {
    pub solution: sdp::Solution,
    pub report: VerificationReport,
    /// Total soundness slack; see the module docs.
    pub delta: f64,
    /// Largest relative mismatch of the identities at random domain points.
    pub pointwise_error: f64,
    pub wall_time: f64,
}

impl ProgramResult {
    /// Whether the solution can be used at all.
    pub fn accepted(&self) -> bool {
        matches!(self.solution.status, Status::Optimal | Status::MaxIter { .. }) && self.report.pass
    }
}

impl EstimationProgram {
    pub fn solve(&self, options: &SolverOptions) -> Result<ProgramResult> {
        let start = Instant::now();
        let mut solution = sdp::solve(&self.sos.problem, options)?;
        let mut report = self.sos.verify(&solution.z, TOL_EQ, TOL_PSD)?;
        let mut delta = self.delta(&report);
        // an exact projection onto the identities usually trades a residual
        // for a much smaller eigenvalue loss
        if matches!(solution.status, Status::Optimal | Status::MaxIter { .. }) {
            if let Some(z) = self.sos.project(&solution.z) {
                let r = self.sos.verify(&z, TOL_EQ, TOL_PSD)?;
                let d = self.delta(&r);
                if (r.pass && !report.pass) || (r.pass == report.pass && d < delta) {
                    solution.z = z;
                    report = r;
                    delta = d;
                }
            }
        }
        let pointwise_error = self.sos.pointwise_check(&solution.z, 50, 0);
        Ok(ProgramResult { solution, report, delta, pointwise_error, wall_time: start.elapsed().as_secs_f64() })
    }

    /// `delta` from the per-constraint slacks of a report.
    pub fn delta(&self, report: &VerificationReport) -> f64 {
        let mut delta = 0.0;
        for (role, c) in self.roles.iter().zip(&report.constraints) {
            delta += match role {
                Role::Nonnegative => 0.0,
                Role::Initial | Role::Link(_) | Role::Terminal => c.slack,
                Role::Arc(k) => c.slack * (self.grid[*k + 1] - self.grid[*k]),
            };
        }
        delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetKind {
    Outer,
    Violation { kappa: usize, eta: usize },
}

/// `{x in X_0 : v0(x) >= threshold}` in normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetApproximation {
    pub kind: SetKind,
    /// Label of the violated inequality for violation sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violated: Option<String>,
    pub order: u32,
    pub localize_arcs: bool,
    /// Strict-inequality slack, for violation sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub names: Vec<String>,
    pub v0: Polynomial,
    pub threshold: f64,
    pub delta: f64,
    pub prior: Vec<Inequality>,
    pub scaling: Scaling,
    pub objective: f64,
    pub status: String,
    pub iterations: usize,
    pub residuals: sdp::Residuals,
    pub verification: VerificationReport,
    pub pointwise_error: f64,
    pub wall_time: f64,
}

impl SetApproximation {
    pub fn in_prior(&self, x: &[f64]) -> bool {
        self.prior.iter().all(|g| g.poly.evaluate(x).is_ok_and(|v| v >= 0.0))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.v0.evaluate(x).unwrap_or(f64::NAN)
    }

    /// Membership of a normalized point.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.in_prior(x) && self.value(x) >= self.threshold
    }

    /// Membership of a point in original coordinates.
    pub fn contains_original(&self, x: &[f64]) -> bool {
        self.contains(&self.scaling.to_scaled(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sets always serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Reads the set `{v0 >= 1 - delta}` off an outer or violation solution.
pub fn extract_set(program: &EstimationProgram, result: &ProgramResult) -> Result<SetApproximation> {
    let kind = match program.kind {
        ProgramKind::Outer => SetKind::Outer,
        ProgramKind::Violation { kappa, eta } => SetKind::Violation { kappa, eta },
        ProgramKind::Certificate => return Err(RelaxError::Solver("certificate programs have no v0".into())),
    };
    let status = &result.solution.status;
    if !matches!(status, Status::Optimal | Status::MaxIter { .. }) {
        return Err(RelaxError::Solver(status.name().into()));
    }
    if !result.report.pass {
        return Err(RelaxError::Rejected {
            residual: result.report.max_residual,
            min_eigenvalue: result.report.min_eigenvalue,
        });
    }
    let v0 = program.sos.poly("v0").expect("outer programs have v0").extract(&result.solution.z);
    let objective = unit_box_integral(&v0, program.options.order)?;
    Ok(SetApproximation {
        kind,
        violated: program.violated.clone(),
        order: program.options.order,
        localize_arcs: program.options.localize_arcs,
        epsilon: matches!(kind, SetKind::Violation { .. }).then_some(program.options.epsilon),
        names: program.names.clone(),
        v0,
        threshold: 1.0 - result.delta,
        delta: result.delta,
        prior: program.prior.clone(),
        scaling: program.scaling.clone(),
        objective,
        status: status.name().into(),
        iterations: result.solution.iterations,
        residuals: result.solution.residuals.clone(),
        verification: result.report.clone(),
        pointwise_error: result.pointwise_error,
        wall_time: result.wall_time,
    })
}

/// Arc polynomials and Gram blocks proving that no initial condition is consistent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyCertificate {
    pub order: u32,
    pub localize_arcs: bool,
    pub arcs: Vec<Polynomial>,
    pub grams: Vec<GramBlock>,
    /// Must stay below one for the certificate to hold.
    pub delta: f64,
    pub verification: VerificationReport,
    pub pointwise_error: f64,
    pub status: String,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramBlock {
    pub constraint: String,
    pub multiplier: String,
    pub basis: Vec<Vec<u32>>,
    /// Upper triangle in `svec` layout.
    pub svec: Vec<f64>,
}

impl InconsistencyCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificates always serialize")
    }
}

/// Outcome of the certificate program.
pub enum CertificateOutcome {
    Found(InconsistencyCertificate),
    /// A solution exists but fails verification or has `delta >= 1`.
    Unverified {
        report: VerificationReport,
        delta: f64,
    },
    /// The solver proved the program infeasible or gave up.
    NotFound {
        status: String,
    },
}

pub fn extract_certificate(program: &EstimationProgram, result: &ProgramResult) -> CertificateOutcome {
    let status = &result.solution.status;
    if !matches!(status, Status::Optimal | Status::MaxIter { .. }) {
        return CertificateOutcome::NotFound { status: status.name().into() };
    }
    if !result.report.pass || !(result.delta < 1.0) {
        return CertificateOutcome::Unverified { report: result.report.clone(), delta: result.delta };
    }
    let z = &result.solution.z;
    let arcs = program.sos.polys.iter().map(|p| p.extract(z)).collect();
    let grams = program
        .sos
        .constraints
        .iter()
        .flat_map(|c| {
            c.multipliers.iter().map(move |m| GramBlock {
                constraint: c.name.clone(),
                multiplier: m.label.clone(),
                basis: m.basis.iter().map(|b| b.exponents().to_vec()).collect(),
                svec: program.sos.gram(z, m).to_vec(),
            })
        })
        .collect();
    CertificateOutcome::Found(InconsistencyCertificate {
        order: program.options.order,
        localize_arcs: program.options.localize_arcs,
        arcs,
        grams,
        delta: result.delta,
        verification: result.report.clone(),
        pointwise_error: result.pointwise_error,
        status: status.name().into(),
        note: "a verified solution at this order is sufficient for inconsistency; failing to find one proves nothing"
            .into(),
    })
}

#[cfg(test)]
mod tests;
