use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{build_violation_program, extract_set, RelaxError, RelaxOptions, Result, SetApproximation};
use crate::model::{EstimationModel, Inequality};
use crate::sdp::SolverOptions;

/// Inequality `eta` (index into the full list of `X_kappa`) violated at
/// time point `kappa`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViolationIndex {
    pub kappa: usize,
    pub eta: usize,
}

/// Every violation program of a model: the measurement inequalities of each
/// `X_k`, plus those of `X` when `include_global` is set.
pub fn violation_schedule(model: &EstimationModel, include_global: bool) -> Vec<ViolationIndex> {
    let mut out = Vec::new();
    for (kappa, set) in model.measurements.iter().enumerate() {
        let first = if include_global { 0 } else { set.inherited };
        out.extend((first..set.inequalities.len()).map(|eta| ViolationIndex { kappa, eta }));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ViolationResult {
    Set(Box<SetApproximation>),
    /// Violating a constraint of `X_0` at `t_0` leaves `X_0`, so nothing
    /// needs to be solved.
    OutsidePrior,
    /// The violated inequality cannot fail anywhere in the box of `X`, so
    /// the set is empty without solving.
    Empty,
    /// The program could not be solved or verified.
    Failed {
        reason: String,
    },
}

/// `X_0` minus every violation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerApproximation {
    pub prior: Vec<Inequality>,
    pub violations: Vec<(ViolationIndex, ViolationResult)>,
    /// Set when some violation program failed; the inner set is then empty.
    pub conservative_empty: bool,
}

impl InnerApproximation {
    pub fn in_prior(&self, x: &[f64]) -> bool {
        self.prior.iter().all(|g| g.poly.evaluate(x).is_ok_and(|v| v >= 0.0))
    }

    /// Membership of a normalized point.
    pub fn contains(&self, x: &[f64]) -> bool {
        if self.conservative_empty || !self.in_prior(x) {
            return false;
        }
        self.violations.iter().all(|(_, r)| match r {
            ViolationResult::Set(s) => s.value(x) < s.threshold,
            ViolationResult::OutsidePrior | ViolationResult::Empty => true,
            ViolationResult::Failed { .. } => false,
        })
    }
}

/// Builds, solves and extracts one violation set.
pub fn solve_violation(
    model: &EstimationModel,
    index: ViolationIndex,
    options: &RelaxOptions,
    solver: &SolverOptions,
) -> ViolationResult {
    if index.kappa == 0 {
        return ViolationResult::OutsidePrior;
    }
    if let Some(g) = model.measurements.get(index.kappa).and_then(|m| m.inequalities.get(index.eta)) {
        let flipped = g.poly.scale(-1.0).add_constant(-options.epsilon);
        if flipped.upper_bound_on_box(&model.global.bounding_box()) < 0.0 {
            return ViolationResult::Empty;
        }
    }
    let run = || -> Result<SetApproximation> {
        let program = build_violation_program(model, index, options)?;
        let result = program.solve(solver)?;
        extract_set(&program, &result)
    };
    match run() {
        Ok(set) => ViolationResult::Set(Box::new(set)),
        Err(e) => ViolationResult::Failed { reason: e.to_string() },
    }
}

/// Solves every program of `schedule` on `workers` threads. Results come
/// back in schedule order; `progress` sees each one as it completes.
pub fn solve_violations(
    model: &EstimationModel,
    schedule: &[ViolationIndex],
    options: &RelaxOptions,
    solver: &SolverOptions,
    workers: usize,
    progress: &(dyn Fn(ViolationIndex, &ViolationResult) + Sync),
) -> Vec<(ViolationIndex, ViolationResult)> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ViolationResult>>> = Mutex::new(vec![None; schedule.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, schedule.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&idx) = schedule.get(i) else { break };
                let r = solve_violation(model, idx, options, solver);
                progress(idx, &r);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results = slots.into_inner().unwrap();
    schedule.iter().copied().zip(results.into_iter().map(|r| r.expect("every program ran"))).collect()
}

/// Combines violation results into the inner approximation. Every index of
/// `schedule` needs a result.
pub fn inner_from_outers(
    model: &EstimationModel,
    schedule: &[ViolationIndex],
    results: Vec<(ViolationIndex, ViolationResult)>,
) -> Result<InnerApproximation> {
    for idx in schedule {
        if !results.iter().any(|(i, _)| i == idx) {
            return Err(RelaxError::MissingViolation { kappa: idx.kappa, eta: idx.eta });
        }
    }
    let conservative_empty = results.iter().any(|(_, r)| matches!(r, ViolationResult::Failed { .. }));
    Ok(InnerApproximation {
        prior: model.measurements[0].inequalities.clone(),
        violations: results,
        conservative_empty,
    })
}
