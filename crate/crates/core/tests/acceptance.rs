//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use faer::Mat;
use occest::model::{disjoint_example, enzyme_example, static_example, BoxForm, EstimationModel};
use occest::oracle::{integrate_field, mc_volume, uniform_point, Checker, DEFAULT_STEP};
use occest::poly::{monomial_basis, Polynomial, VarSpace};
use occest::relax::{
    build_certificate_program, build_outer_program, extract_certificate, extract_set, violation_schedule,
    CertificateOutcome, InnerApproximation, RelaxOptions, SetApproximation, ViolationIndex, ViolationResult,
};
use occest::sdp::{self, min_eigenvalue, smat, svec_index, Cone, ConicProblem, SolverOptions, SparseMatrix, Status};
use occest::sos::box_moment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Suite {
    failed: usize,
    /// Pointwise identity errors of every accepted program, by label.
    pointwise: Vec<(String, f64)>,
}

impl Suite {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn record(&mut self, label: impl Into<String>, err: f64) {
        self.pointwise.push((label.into(), err));
    }
}

fn solver() -> SolverOptions {
    SolverOptions::default()
}

fn outer(model: &EstimationModel, d: u32) -> Result<SetApproximation, String> {
    let p = build_outer_program(model, &RelaxOptions::new(d)).map_err(|e| e.to_string())?;
    let r = p.solve(&solver()).map_err(|e| e.to_string())?;
    extract_set(&p, &r).map_err(|e| e.to_string())
}

fn cli(args: &[&str], out: &Path) -> Result<f64, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_occest"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(start.elapsed().as_secs_f64())
    } else {
        Err(format!("occest {} exited with {status}", args.join(" ")))
    }
}

/// Rows of a stamped grid CSV, without the comment line.
fn read_grid(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or("empty grid")?.split(',').map(String::from).collect();
    Ok((header, lines.map(|l| l.split(',').map(String::from).collect()).collect()))
}

fn inside_column(path: &Path) -> Result<Vec<bool>, String> {
    let (header, rows) = read_grid(path)?;
    let col = header.iter().position(|h| h == "inside").ok_or("no inside column")?;
    Ok(rows.iter().map(|r| r[col] == "1").collect())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn outer_soundness(suite: &mut Suite) {
    let model = enzyme_example();
    let start = Instant::now();
    let set = match outer(&model, 3) {
        Ok(s) => s,
        Err(e) => return suite.report(1, "outer soundness", false, e),
    };
    let solve_time = start.elapsed().as_secs_f64();
    suite.record("enzyme outer d=3", set.pointwise_error);

    let start = Instant::now();
    let checker = Checker::new(&model);
    let bounds = model.measurements[0].bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut attempts, mut consistent, mut worst) = (0usize, 0usize, f64::INFINITY);
    while consistent < 1000 && start.elapsed().as_secs_f64() < 120.0 {
        attempts += 1;
        let x = uniform_point(&mut rng, &bounds);
        if checker.check(&x, DEFAULT_STEP, 0.0).consistent {
            consistent += 1;
            worst = worst.min(set.value(&x));
        }
    }
    let sample_time = start.elapsed().as_secs_f64();
    let pass = consistent >= 1000 && worst >= 1.0 - 1e-6 && solve_time <= 60.0 && sample_time <= 120.0;
    suite.report(
        1,
        "outer soundness",
        pass,
        format!(
            "{consistent} consistent of {attempts} samples, min v0 {worst:.6}, solve {solve_time:.1} s, sampling {sample_time:.1} s"
        ),
    );
}

fn hierarchy_trend(suite: &mut Suite) {
    let model = static_example(BoxForm::Quadratic);
    let start = Instant::now();
    let mut volumes = Vec::new();
    for d in [2, 4, 6] {
        match outer(&model, d) {
            Ok(s) => {
                suite.record(format!("static outer d={d}"), s.pointwise_error);
                volumes.push(mc_volume(|x| s.contains(x), &[(0.0, 1.0)], 100_000, 2));
            }
            Err(e) => return suite.report(2, "hierarchy trend", false, format!("d = {d}: {e}")),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let monotone = volumes.windows(2).all(|w| w[1].value <= w[0].value + 2.0 * w[0].std_error.hypot(w[1].std_error));
    let last = volumes[2].value;
    let pass = monotone && (last - 0.6).abs() <= 0.05 && elapsed <= 60.0;
    let v: Vec<String> = volumes.iter().map(|v| format!("{:.4}±{:.4}", v.value, v.std_error)).collect();
    suite.report(2, "hierarchy trend", pass, format!("volumes at d = 2, 4, 6: {}, {elapsed:.1} s", v.join(", ")));
}

/// Runs the inner task at d = 4 through the CLI, then checks criteria 3 and 4.
fn inner_soundness(suite: &mut Suite, dir: &Path) {
    let model = enzyme_example();
    let schedule = violation_schedule(&model, false);
    let out = dir.join("inner");
    let run = cli(&["--model", "builtin:enzyme", "--task", "inner", "--order", "4", "--workers", "4"], &out);
    let summary = read_json(&out.join("inner_d4.json"));
    let count = summary.as_ref().ok().and_then(|s| s["programs"].as_u64());
    suite.report(
        4,
        "violation enumeration",
        schedule.len() == 12 && count == Some(12),
        format!("schedule has {} programs, the inner run reports {count:?}", schedule.len()),
    );

    let elapsed = match run {
        Ok(t) => t,
        Err(e) => return suite.report(3, "inner soundness", false, e),
    };
    let mut violations = Vec::new();
    for idx in &schedule {
        let path = out.join(format!("violation_k{}_e{}.json", idx.kappa, idx.eta));
        let r: ViolationResult = match fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => return suite.report(3, "inner soundness", false, format!("{}: {e}", path.display())),
        };
        if let ViolationResult::Set(s) = &r {
            suite.record(format!("enzyme violation k={} e={} d=4", idx.kappa, idx.eta), s.pointwise_error);
        }
        violations.push((ViolationIndex { kappa: idx.kappa, eta: idx.eta }, r));
    }
    let inner = InnerApproximation {
        prior: model.measurements[0].inequalities.clone(),
        conservative_empty: violations.iter().any(|(_, r)| matches!(r, ViolationResult::Failed { .. })),
        violations,
    };

    let checker = Checker::new(&model);
    let bounds = model.measurements[0].bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = Vec::new();
    let mut attempts = 0usize;
    while points.len() < 2000 && attempts < 20_000_000 {
        attempts += 1;
        let x = uniform_point(&mut rng, &bounds);
        if inner.contains(&x) {
            points.push(x);
        }
    }
    let bad = points.iter().filter(|x| !checker.check(x, DEFAULT_STEP, 0.0).consistent).count();
    let pass = points.len() >= 500 && bad == 0 && elapsed <= 1800.0;
    suite.report(
        3,
        "inner soundness",
        pass,
        format!(
            "{} points of I from {attempts} samples, {bad} inconsistent, inner run {elapsed:.0} s with 4 workers",
            points.len()
        ),
    );
}

fn certificates(suite: &mut Suite) {
    let start = Instant::now();
    let disjoint = disjoint_example(BoxForm::Linear);
    let mut found = None;
    for d in 1..=3 {
        let Ok(p) = build_certificate_program(&disjoint, &RelaxOptions::new(d)) else { continue };
        let Ok(r) = p.solve(&solver()) else { continue };
        if let CertificateOutcome::Found(c) = extract_certificate(&p, &r) {
            found = Some((d, c));
            break;
        }
    }
    let disjoint_ok = match &found {
        Some((d, c)) => {
            suite.record(format!("disjoint certificate d={d}"), c.pointwise_error);
            c.verification.max_residual <= 1e-6 && c.verification.min_eigenvalue >= -1e-7 && c.delta < 1.0
        }
        None => false,
    };

    let enzyme = enzyme_example();
    let mut spurious = Vec::new();
    for d in 2..=4 {
        let outcome = build_certificate_program(&enzyme, &RelaxOptions::new(d))
            .map_err(|e| e.to_string())
            .and_then(|p| p.solve(&solver()).map(|r| extract_certificate(&p, &r)).map_err(|e| e.to_string()));
        match outcome {
            Ok(CertificateOutcome::Found(_)) => spurious.push(d),
            Ok(_) => {}
            Err(e) => {
                eprintln!("enzyme certificate at d = {d}: {e}");
                spurious.push(d);
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let detail = match &found {
        Some((d, c)) => format!(
            "disjoint certificate at d = {d} (residual {:.1e}, min eigenvalue {:.1e}); enzyme certificates at orders {spurious:?}; {elapsed:.1} s",
            c.verification.max_residual, c.verification.min_eigenvalue
        ),
        None => format!("no disjoint certificate at d <= 3; {elapsed:.1} s"),
    };
    suite.report(5, "inconsistency certificate", disjoint_ok && spurious.is_empty() && elapsed <= 60.0, detail);
}

fn liouville_identity(suite: &mut Suite) {
    let start = Instant::now();
    let model = enzyme_example();
    let space = model.time_space();
    let basis = monomial_basis(space, 4);
    let bounds = model.measurements[0].bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut worst_simpson = 0.0f64;
    for _ in 0..20 {
        let v = Polynomial::from_terms(space, basis.iter().map(|m| (m.clone(), rng.random_range(-1.0..1.0))));
        let lv = v.liouville(&model.dynamics).expect("degrees are small").compile();
        let v = v.compile();
        for _ in 0..20 {
            let x0 = uniform_point(&mut rng, &bounds);
            let traj = integrate_field(&model.dynamics, &x0, &[0.0, 1.0], 1e-4).expect("bounded dynamics");
            let at = |j: usize| {
                let mut p = traj.states[j].clone();
                p.push(traj.times[j]);
                p
            };
            let values: Vec<f64> = (0..traj.times.len()).map(|j| lv.eval(&at(j))).collect();
            let last = values.len() - 1;
            let exact = v.eval(&at(last)) - v.eval(&at(0));
            let mut integral = 0.0;
            for j in 1..values.len() {
                integral += 0.5 * (traj.times[j] - traj.times[j - 1]) * (values[j - 1] + values[j]);
            }
            worst = worst.max((integral - exact).abs());
            // Simpson on the same uniform nodes separates quadrature error from integration error
            let h = traj.times[1] - traj.times[0];
            let mut simpson = values[0] + values[last];
            for (j, value) in values.iter().enumerate().take(last).skip(1) {
                simpson += if j % 2 == 1 { 4.0 } else { 2.0 } * value;
            }
            worst_simpson = worst_simpson.max((simpson * h / 3.0 - exact).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    suite.report(
        6,
        "Liouville identity",
        worst <= 1e-6 && elapsed <= 30.0,
        format!(
            "largest trapezoid error {worst:.2e} over 400 trajectories (Simpson {worst_simpson:.1e}), {elapsed:.1} s"
        ),
    );
}

/// Small conic programs addressing PSD entries by matrix position.
struct Builder {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
    n: usize,
    c: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Builder {
    fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::new();
        let mut n = 0;
        for c in cones {
            offsets.push(n);
            n += c.dim();
        }
        Self { cones: cones.to_vec(), offsets, n, c: vec![0.0; n], rows: Vec::new() }
    }

    fn col(&self, k: usize, i: usize, j: usize) -> (usize, f64) {
        match self.cones[k] {
            Cone::Psd(n) => {
                (self.offsets[k] + svec_index(i, j, n), if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 })
            }
            _ => (self.offsets[k] + i, 1.0),
        }
    }

    fn obj(mut self, k: usize, i: usize, j: usize, v: f64) -> Self {
        let (c, f) = self.col(k, i, j);
        self.c[c] += v * f;
        self
    }

    fn row(mut self, terms: &[(usize, usize, usize, f64)], rhs: f64) -> Self {
        let t = terms.iter().map(|&(k, i, j, v)| {
            let (c, f) = self.col(k, i, j);
            (c, v * f)
        });
        let t = t.collect();
        self.rows.push((t, rhs));
        self
    }

    fn build(self) -> ConicProblem {
        let trip =
            self.rows.iter().enumerate().flat_map(|(r, (t, _))| t.iter().map(move |&(c, v)| (r, c, v))).collect();
        ConicProblem {
            a: SparseMatrix::from_triplets(self.rows.len(), self.n, trip),
            b: self.rows.iter().map(|r| r.1).collect(),
            cones: self.cones,
            c: self.c,
        }
    }
}

enum Expect {
    Optimum(f64),
    Infeasible,
}

fn regression_problems() -> Vec<(&'static str, ConicProblem, Expect)> {
    use Cone::*;
    use Expect::*;
    let theta = (0..5)
        .flat_map(|i| (i..5).map(move |j| (i, j)))
        .fold(Builder::new(&[Psd(5)]), |b, (i, j)| b.obj(0, i, j, if i == j { -1.0 } else { -2.0 }))
        .row(&(0..5).map(|i| (0, i, i, 1.0)).collect::<Vec<_>>(), 1.0);
    let theta = (0..5).fold(theta, |b, i| b.row(&[(0, i, (i + 1) % 5, 1.0)], 0.0));
    let cut = (0..3).fold(Builder::new(&[Psd(3)]), |b, i| {
        (i + 1..3).fold(b, |b, j| b.obj(0, i, j, 2.0)).row(&[(0, i, i, 1.0)], 1.0)
    });
    let blocks = [(1, 0), (2, 1)].iter().fold(
        Builder::new(&[Free(2), Psd(2), Psd(2)]).obj(0, 0, 0, 1.0).obj(0, 1, 1, 2.0),
        |b, &(k, t)| {
            b.row(&[(k, 0, 0, 1.0), (0, t, t, -1.0)], 0.0)
                .row(&[(k, 1, 1, 1.0), (0, t, t, -1.0)], 0.0)
                .row(&[(k, 0, 1, 1.0)], 1.0 + t as f64)
        },
    );
    vec![
        (
            "largest eigenvalue, trace form",
            Builder::new(&[Psd(2)])
                .obj(0, 0, 0, -1.0)
                .obj(0, 1, 1, -2.0)
                .row(&[(0, 0, 0, 1.0), (0, 1, 1, 1.0)], 1.0)
                .build(),
            Optimum(-2.0),
        ),
        (
            "largest eigenvalue, epigraph form",
            Builder::new(&[Free(1), Psd(2)])
                .obj(0, 0, 0, 1.0)
                .row(&[(1, 0, 0, 1.0), (0, 0, 0, -1.0)], -2.0)
                .row(&[(1, 1, 1, 1.0), (0, 0, 0, -1.0)], -2.0)
                .row(&[(1, 0, 1, 1.0)], -1.0)
                .build(),
            Optimum(3.0),
        ),
        (
            "determinant boundary",
            Builder::new(&[Free(1), Psd(2)])
                .obj(0, 0, 0, 1.0)
                .row(&[(1, 0, 0, 1.0), (0, 0, 0, -1.0)], 0.0)
                .row(&[(1, 1, 1, 1.0), (0, 0, 0, -1.0)], 0.0)
                .row(&[(1, 0, 1, 1.0)], 1.0)
                .build(),
            Optimum(1.0),
        ),
        (
            "unit diagonal correlation",
            Builder::new(&[Psd(2)]).obj(0, 0, 1, 2.0).row(&[(0, 0, 0, 1.0)], 1.0).row(&[(0, 1, 1, 1.0)], 1.0).build(),
            Optimum(-2.0),
        ),
        ("three-node cut", cut.build(), Optimum(-3.0)),
        ("theta of the five-cycle", theta.build(), Optimum(-5f64.sqrt())),
        (
            "quartic lower bound",
            Builder::new(&[Free(1), Psd(3)])
                .obj(0, 0, 0, -1.0)
                .row(&[(1, 0, 0, 1.0), (0, 0, 0, 1.0)], 1.0)
                .row(&[(1, 0, 1, 2.0)], 0.0)
                .row(&[(1, 0, 2, 2.0), (1, 1, 1, 1.0)], -3.0)
                .row(&[(1, 1, 2, 2.0)], 0.0)
                .row(&[(1, 2, 2, 1.0)], 1.0)
                .build(),
            Optimum(1.25),
        ),
        (
            "LP block",
            Builder::new(&[Nonneg(2)])
                .obj(0, 0, 0, 1.0)
                .obj(0, 1, 1, 1.0)
                .row(&[(0, 0, 0, 1.0), (0, 1, 1, 2.0)], 2.0)
                .build(),
            Optimum(1.0),
        ),
        (
            "LP simplex",
            Builder::new(&[Nonneg(3)])
                .obj(0, 0, 0, -1.0)
                .obj(0, 1, 1, -1.0)
                .row(&[(0, 0, 0, 1.0), (0, 1, 1, 1.0), (0, 2, 2, 1.0)], 1.0)
                .build(),
            Optimum(-1.0),
        ),
        (
            "LP with a free variable",
            Builder::new(&[Free(1), Nonneg(1)]).obj(0, 0, 0, 1.0).row(&[(0, 0, 0, 1.0), (1, 0, 0, -1.0)], 1.0).build(),
            Optimum(1.0),
        ),
        (
            "coupled PSD and LP blocks",
            Builder::new(&[Psd(2), Nonneg(1)])
                .obj(0, 0, 0, 1.0)
                .obj(0, 1, 1, 1.0)
                .obj(1, 0, 0, 1.0)
                .row(&[(0, 0, 0, 1.0), (1, 0, 0, 1.0)], 1.0)
                .row(&[(0, 1, 1, 1.0)], 1.0)
                .row(&[(0, 0, 1, 1.0)], 1.0)
                .build(),
            Optimum(2.0),
        ),
        ("independent PSD blocks", blocks.build(), Optimum(5.0)),
        (
            "infeasible LP",
            Builder::new(&[Nonneg(1)]).obj(0, 0, 0, 1.0).row(&[(0, 0, 0, 1.0)], -1.0).build(),
            Infeasible,
        ),
        ("infeasible SDP", Builder::new(&[Psd(2)]).obj(0, 0, 1, 1.0).row(&[(0, 0, 0, 1.0)], -1.0).build(), Infeasible),
    ]
}

/// Smallest eigenvalue over the conic blocks of `v` (free blocks must vanish
/// when `free_zero` is set).
fn cone_margin(cones: &[Cone], v: &[f64], free_zero: bool) -> f64 {
    let mut off = 0;
    let mut worst = f64::INFINITY;
    for c in cones {
        let b = &v[off..off + c.dim()];
        off += c.dim();
        let m = match *c {
            Cone::Free(_) if free_zero => -b.iter().fold(0.0f64, |a, x| a.max(x.abs())),
            Cone::Free(_) => continue,
            Cone::Nonneg(_) => b.iter().copied().fold(f64::INFINITY, f64::min),
            Cone::Psd(n) => {
                let m: Mat<f64> = smat(b, n);
                min_eigenvalue(m.as_ref()).unwrap_or(f64::NEG_INFINITY)
            }
        };
        worst = worst.min(m);
    }
    worst
}

fn check_problem(p: &ConicProblem, sol: &sdp::Solution, expect: &Expect) -> Result<(), String> {
    match expect {
        Expect::Optimum(v) => {
            if sol.status != Status::Optimal {
                return Err(format!("status {}", sol.status.name()));
            }
            let err = (sol.primal_objective - v).abs() / (1.0 + v.abs());
            let res = p.equality_residual(&sol.z);
            let mut dual = vec![0.0; p.num_vars()];
            p.a.mul_t_vec(&sol.y, &mut dual);
            let dres = dual.iter().zip(&sol.s).zip(&p.c).map(|((a, s), c)| (a + s - c).abs()).fold(0.0, f64::max);
            let cone = cone_margin(&p.cones, &sol.z, false).min(cone_margin(&p.cones, &sol.s, false));
            if err > 1e-7 || res > 1e-7 || dres > 1e-7 || cone < -1e-7 {
                return Err(format!("objective error {err:.1e}, residuals {res:.1e} / {dres:.1e}, cone {cone:.1e}"));
            }
        }
        Expect::Infeasible => {
            let Status::PrimalInfeasible { ray } = &sol.status else {
                return Err(format!("status {}", sol.status.name()));
            };
            let by: f64 = p.b.iter().zip(ray).map(|(b, y)| b * y).sum();
            let mut aty = vec![0.0; p.num_vars()];
            p.a.mul_t_vec(ray, &mut aty);
            let neg: Vec<f64> = aty.iter().map(|v| -v).collect();
            let margin = cone_margin(&p.cones, &neg, true);
            if (by - 1.0).abs() > 1e-7 || margin < -1e-7 {
                return Err(format!("ray has b'y = {by}, cone margin {margin:.1e}"));
            }
        }
    }
    Ok(())
}

fn sdp_regression(suite: &mut Suite) {
    let problems = regression_problems();
    let opts = SolverOptions { tol_gap: 1e-9, tol_feas: 1e-9, ..solver() };
    let mut errors = Vec::new();
    let mut deterministic = true;
    for (name, p, expect) in &problems {
        let first = sdp::solve(p, &opts);
        let second = sdp::solve(p, &opts);
        match (first, second) {
            (Ok(a), Ok(b)) => {
                if let Err(e) = check_problem(p, &a, expect) {
                    errors.push(format!("{name}: {e}"));
                }
                let bytes = |s: &sdp::Solution| serde_json::to_string(s).expect("solutions serialize");
                deterministic &= bytes(&a) == bytes(&b);
            }
            (Err(e), _) | (_, Err(e)) => errors.push(format!("{name}: {e}")),
        }
    }
    let pass = problems.len() >= 10 && errors.is_empty() && deterministic;
    let mut detail = format!("{} problems, {} failures, deterministic: {deterministic}", problems.len(), errors.len());
    for e in &errors {
        detail.push_str("; ");
        detail.push_str(e);
    }
    suite.report(7, "SDP regression", pass, detail);
}

fn lebesgue_moments(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1_000_000;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for dim in 1..=3 {
        let bounds: Vec<(f64, f64)> = (0..dim)
            .map(|_| {
                let l = rng.random_range(-1.0..1.0);
                (l, l + rng.random_range(0.2..2.0))
            })
            .collect();
        let basis = monomial_basis(VarSpace::states(dim), 6);
        let volume: f64 = bounds.iter().map(|(l, u)| u - l).product();
        let (mut sum, mut sq) = (vec![0.0; basis.len()], vec![0.0; basis.len()]);
        for _ in 0..n {
            let x = uniform_point(&mut rng, &bounds);
            for (k, m) in basis.iter().enumerate() {
                let v = m.evaluate(&x);
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        for (k, m) in basis.iter().enumerate() {
            let mean = sum[k] / n as f64;
            let sd = ((sq[k] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt() * volume;
            let exact = box_moment(&bounds, m);
            let diff = (mean * volume - exact).abs();
            // the constant monomial has no variance
            let z = if sd > 0.0 {
                diff / sd
            } else if diff < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
            checked += 1;
        }
    }
    suite.report(
        8,
        "Lebesgue moments",
        worst <= 3.0,
        format!("{checked} monomials over boxes of dimension 1 to 3, largest deviation {worst:.2} sigma"),
    );
}

/// Outer grids at d = 3 and d = 5 through the CLI.
fn figure_grids(suite: &mut Suite, dir: &Path) {
    let mut grids = Vec::new();
    let mut times = Vec::new();
    for d in ["3", "5"] {
        let out = dir.join(format!("outer{d}"));
        // parameter plane through the nominal point; the x1-x2 plane of X_0 lies inside both sets
        let plane = "--project p1,p2 --slice x1=0.9 --slice x2=0.05 --slice p3=5.05";
        let mut args = vec!["--model", "builtin:enzyme", "--task", "outer", "--order", d];
        args.extend(plane.split(' '));
        match cli(&args, &out) {
            Ok(t) => times.push(t),
            Err(e) => return suite.report(10, "figure grids", false, e),
        }
        if let Ok(v) = read_json(&out.join(format!("outer_d{d}.json"))) {
            if let Some(e) = v["pointwise_error"].as_f64() {
                suite.record(format!("enzyme outer d={d} (cli)"), e);
            }
        }
        match inside_column(&out.join(format!("outer_d{d}_grid.csv"))) {
            Ok(g) => grids.push(g),
            Err(e) => return suite.report(10, "figure grids", false, e),
        }
    }
    let (coarse, fine) = (&grids[0], &grids[1]);
    let agree = coarse.iter().zip(fine).filter(|(c, f)| **c || !**f).count();
    let share = agree as f64 / coarse.len() as f64;
    suite.report(
        10,
        "figure grids",
        coarse.len() == fine.len() && share >= 0.99,
        format!(
            "p1-p2 plane: d = 5 set inside d = 3 set on {:.2}% of {} points ({} vs {} inside), {:.0} s and {:.0} s",
            100.0 * share,
            coarse.len(),
            fine.iter().filter(|v| **v).count(),
            coarse.iter().filter(|v| **v).count(),
            times[0],
            times[1]
        ),
    );
}

fn putinar_identities(suite: &mut Suite) {
    let worst =
        suite.pointwise.iter().cloned().fold(("none".to_string(), 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let pass = !suite.pointwise.is_empty() && suite.pointwise.iter().all(|(_, e)| *e <= 1e-6);
    suite.report(
        9,
        "Putinar identities",
        pass,
        format!("{} accepted programs, largest relative error {:.2e} ({})", suite.pointwise.len(), worst.1, worst.0),
    );
}

fn main() {
    // `cargo test -- --list` and filters: this target has one unnamed check
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut suite = Suite { failed: 0, pointwise: Vec::new() };
    outer_soundness(&mut suite);
    hierarchy_trend(&mut suite);
    inner_soundness(&mut suite, dir.path());
    certificates(&mut suite);
    liouville_identity(&mut suite);
    sdp_regression(&mut suite);
    lebesgue_moments(&mut suite);
    figure_grids(&mut suite, dir.path());
    putinar_identities(&mut suite);
    // exit skips destructors
    drop(dir);
    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
