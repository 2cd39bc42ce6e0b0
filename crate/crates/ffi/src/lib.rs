//! C interface to `occest`.
//!
//! Every fallible function returns an [`OccestStatus`]. After a failure,
//! [`occest_last_error`] describes it until the next call on the same thread.
//! Handles are opaque; release each with its `_free` function. Points passed
//! in are in the model's original units unless a name says otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use occest::model::{disjoint_file, enzyme_file, static_file, BoxForm, EstimationModel, ModelFile, Scaling};
use occest::oracle::is_consistent;
use occest::relax::{
    build_certificate_program, build_outer_program, extract_certificate, extract_set, inner_from_outers,
    solve_violations, violation_schedule, CertificateOutcome, InnerApproximation, RelaxOptions, SetApproximation,
    DEFAULT_EPSILON,
};
use occest::sdp::SolverOptions;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OccestStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Solver = 5,
    /// A certificate candidate was found but failed verification.
    Unverified = 6,
    Panic = 7,
}

/// Relaxation and solver settings.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OccestOptions {
    pub localize_arcs: bool,
    pub epsilon: f64,
    pub solver_tol: f64,
    pub max_iter: u32,
    /// Threads for the violation programs of `occest_inner`.
    pub workers: u32,
}

pub struct OccestModel {
    model: EstimationModel,
    names: Vec<CString>,
}

pub struct OccestSet {
    set: SetApproximation,
}

pub struct OccestInner {
    inner: InnerApproximation,
    scaling: Scaling,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(OccestStatus, String);

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OccestStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OccestStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {message}"));
            OccestStatus::Panic
        }
    }
}

fn null() -> Failure {
    Failure(OccestStatus::NullArgument, "null pointer argument".into())
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure(OccestStatus::InvalidUtf8, "string is not UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn point<'a>(x: *const f64, n: usize, expected: usize) -> Result<&'a [f64], Failure> {
    if x.is_null() {
        return Err(null());
    }
    if n != expected {
        return Err(Failure(OccestStatus::InvalidArgument, format!("expected {expected} coordinates, got {n}")));
    }
    Ok(std::slice::from_raw_parts(x, n))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn options(opts: *const OccestOptions, order: u32) -> (RelaxOptions, SolverOptions, usize) {
    let o = if opts.is_null() { occest_options_default() } else { *opts };
    let relax = RelaxOptions { localize_arcs: o.localize_arcs, epsilon: o.epsilon, ..RelaxOptions::new(order) };
    let solver = SolverOptions {
        tol_gap: o.solver_tol,
        tol_feas: o.solver_tol,
        max_iter: o.max_iter as usize,
        ..SolverOptions::default()
    };
    (relax, solver, o.workers.max(1) as usize)
}

fn wrap_model(file: ModelFile) -> Result<OccestModel, Failure> {
    let model = file.build().map_err(|e| Failure(OccestStatus::Parse, e.to_string()))?;
    let names = model.names.iter().map(|n| CString::new(n.as_str()).unwrap_or_default()).collect();
    Ok(OccestModel { model, names })
}

fn invalid(e: impl ToString) -> Failure {
    Failure(OccestStatus::InvalidArgument, e.to_string())
}

fn solver_failure(e: impl ToString) -> Failure {
    Failure(OccestStatus::Solver, e.to_string())
}

#[no_mangle]
pub extern "C" fn occest_options_default() -> OccestOptions {
    let s = SolverOptions::default();
    OccestOptions {
        localize_arcs: false,
        epsilon: DEFAULT_EPSILON,
        solver_tol: s.tol_feas,
        max_iter: s.max_iter as u32,
        workers: 1,
    }
}

/// Message of the last failure on this thread; empty after a success.
#[no_mangle]
pub extern "C" fn occest_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a model document (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_model_parse(json: *const c_char, out: *mut *mut OccestModel) -> OccestStatus {
    guard(|| {
        let file = ModelFile::from_json(text(json)?).map_err(|e| Failure(OccestStatus::Parse, e.to_string()))?;
        store(out, wrap_model(file)?)
    })
}

/// One of the bundled models: `enzyme`, `static` or `disjoint`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_model_builtin(name: *const c_char, out: *mut *mut OccestModel) -> OccestStatus {
    guard(|| {
        let file = match text(name)? {
            "enzyme" => enzyme_file(),
            "static" => static_file(BoxForm::Linear),
            "disjoint" => disjoint_file(BoxForm::Linear),
            other => return Err(invalid(format!("unknown builtin model '{other}'"))),
        };
        store(out, wrap_model(file)?)
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn occest_model_free(model: *mut OccestModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of states including parameters; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occest_model_dimension(model: *const OccestModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_states())
}

/// Name of variable `i`, owned by the model; null when out of range.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occest_model_variable_name(model: *const OccestModel, i: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.names.get(i)).map_or(ptr::null(), |c| c.as_ptr())
}

/// Maps `x` (original units) to the normalized unit box.
///
/// # Safety
/// `x` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn occest_model_to_scaled(
    model: *const OccestModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> OccestStatus {
    guard(|| {
        let m = handle(model)?;
        let x = point(x, n, m.model.n_states())?;
        if out.is_null() {
            return Err(null());
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&m.model.scaling.to_scaled(x));
        Ok(())
    })
}

/// Simulates from `x` and checks every constraint; `*consistent` is 1 or 0.
///
/// # Safety
/// `x` must hold `n` doubles and `consistent` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_is_consistent(
    model: *const OccestModel,
    x: *const f64,
    n: usize,
    step: f64,
    consistent: *mut c_int,
) -> OccestStatus {
    guard(|| {
        let m = handle(model)?;
        let x = point(x, n, m.model.n_states())?;
        if consistent.is_null() {
            return Err(null());
        }
        if !(step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        let v = is_consistent(&m.model, &m.model.scaling.to_scaled(x), step, 0.0);
        *consistent = c_int::from(v.consistent);
        Ok(())
    })
}

/// Outer approximation at relaxation order `order`. `opts` may be null.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_outer(
    model: *const OccestModel,
    order: u32,
    opts: *const OccestOptions,
    out: *mut *mut OccestSet,
) -> OccestStatus {
    guard(|| {
        let m = handle(model)?;
        let (relax, solver, _) = options(opts, order);
        let program = build_outer_program(&m.model, &relax).map_err(invalid)?;
        let result = program.solve(&solver).map_err(solver_failure)?;
        let set = extract_set(&program, &result).map_err(solver_failure)?;
        store(out, OccestSet { set })
    })
}

/// # Safety
/// `set` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn occest_set_free(set: *mut OccestSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Points with `v0 >= threshold` belong to the set; NaN for a null handle.
///
/// # Safety
/// `set` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occest_set_threshold(set: *const OccestSet) -> f64 {
    set.as_ref().map_or(f64::NAN, |s| s.set.threshold)
}

/// `v0` at `x`.
///
/// # Safety
/// `x` must hold `n` doubles and `value` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_set_value(
    set: *const OccestSet,
    x: *const f64,
    n: usize,
    value: *mut f64,
) -> OccestStatus {
    guard(|| {
        let s = &handle(set)?.set;
        let x = point(x, n, s.names.len())?;
        if value.is_null() {
            return Err(null());
        }
        *value = s.value(&s.scaling.to_scaled(x));
        Ok(())
    })
}

/// # Safety
/// `x` must hold `n` doubles and `inside` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_set_contains(
    set: *const OccestSet,
    x: *const f64,
    n: usize,
    inside: *mut c_int,
) -> OccestStatus {
    guard(|| {
        let s = &handle(set)?.set;
        let x = point(x, n, s.names.len())?;
        if inside.is_null() {
            return Err(null());
        }
        *inside = c_int::from(s.contains_original(x));
        Ok(())
    })
}

/// Serializes the set; release the string with `occest_string_free`.
///
/// # Safety
/// `set` must be a live handle and `json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_set_to_json(set: *const OccestSet, json: *mut *mut c_char) -> OccestStatus {
    guard(|| {
        let s = handle(set)?;
        if json.is_null() {
            return Err(null());
        }
        *json = CString::new(s.set.to_json()).map_err(invalid)?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_set_from_json(json: *const c_char, out: *mut *mut OccestSet) -> OccestStatus {
    guard(|| {
        let set = SetApproximation::from_json(text(json)?).map_err(|e| Failure(OccestStatus::Parse, e.to_string()))?;
        store(out, OccestSet { set })
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn occest_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Inner approximation from all violation programs at order `order`.
/// A failed program leaves the inner set empty rather than failing the call.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_inner(
    model: *const OccestModel,
    order: u32,
    opts: *const OccestOptions,
    out: *mut *mut OccestInner,
) -> OccestStatus {
    guard(|| {
        let m = handle(model)?;
        if out.is_null() {
            return Err(null());
        }
        let (relax, solver, workers) = options(opts, order);
        build_outer_program(&m.model, &relax).map_err(invalid)?;
        let schedule = violation_schedule(&m.model, false);
        let results = solve_violations(&m.model, &schedule, &relax, &solver, workers, &|_, _| {});
        let inner = inner_from_outers(&m.model, &schedule, results).map_err(solver_failure)?;
        store(out, OccestInner { inner, scaling: m.model.scaling.clone() })
    })
}

/// # Safety
/// `inner` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn occest_inner_free(inner: *mut OccestInner) {
    if !inner.is_null() {
        drop(Box::from_raw(inner));
    }
}

/// Number of violation programs behind the set; 0 for a null handle.
///
/// # Safety
/// `inner` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occest_inner_program_count(inner: *const OccestInner) -> usize {
    inner.as_ref().map_or(0, |i| i.inner.violations.len())
}

/// Whether some violation program failed, leaving the set empty.
///
/// # Safety
/// `inner` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occest_inner_is_conservatively_empty(inner: *const OccestInner) -> bool {
    inner.as_ref().is_some_and(|i| i.inner.conservative_empty)
}

/// # Safety
/// `x` must hold `n` doubles and `inside` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occest_inner_contains(
    inner: *const OccestInner,
    x: *const f64,
    n: usize,
    inside: *mut c_int,
) -> OccestStatus {
    guard(|| {
        let i = handle(inner)?;
        let x = point(x, n, i.scaling.offset.len())?;
        if inside.is_null() {
            return Err(null());
        }
        *inside = c_int::from(i.inner.contains(&i.scaling.to_scaled(x)));
        Ok(())
    })
}

/// Searches for a proof that no initial condition is consistent. On success
/// `*found` is 1 and `*json` (if not null) receives the certificate, or `*found`
/// is 0 when the order is too low or the model is consistent.
/// `OCCEST_STATUS_UNVERIFIED` reports a candidate that failed verification.
///
/// # Safety
/// `model` must be a live handle, `found` a valid pointer, `json` valid or null.
#[no_mangle]
pub unsafe extern "C" fn occest_certify(
    model: *const OccestModel,
    order: u32,
    opts: *const OccestOptions,
    found: *mut c_int,
    json: *mut *mut c_char,
) -> OccestStatus {
    guard(|| {
        let m = handle(model)?;
        if found.is_null() {
            return Err(null());
        }
        let (relax, solver, _) = options(opts, order);
        let program = build_certificate_program(&m.model, &relax).map_err(invalid)?;
        let result = program.solve(&solver).map_err(solver_failure)?;
        *found = 0;
        match extract_certificate(&program, &result) {
            CertificateOutcome::Found(c) => {
                *found = 1;
                if !json.is_null() {
                    *json = CString::new(c.to_json()).map_err(invalid)?.into_raw();
                }
                Ok(())
            }
            CertificateOutcome::NotFound { .. } => Ok(()),
            CertificateOutcome::Unverified { report, delta } => Err(Failure(
                OccestStatus::Unverified,
                format!(
                    "residual {:.3e}, min eigenvalue {:.3e}, delta {delta:.3e}",
                    report.max_residual, report.min_eigenvalue
                ),
            )),
        }
    })
}
