use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use occest::model::{disjoint_file, enzyme_file, static_file, BoxForm, EstimationModel, ModelError, ModelFile};
use occest::oracle::{mc_volume, sample_consistent, DEFAULT_STEP};
use occest::relax::{
    build_certificate_program, build_outer_program, extract_certificate, extract_set, inner_from_outers,
    solve_violations, violation_schedule, CertificateOutcome, RelaxOptions, SetApproximation, ViolationIndex,
    ViolationResult, DEFAULT_EPSILON,
};
use occest::sdp::SolverOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Task {
    Outer,
    Inner,
    Certify,
    Sample,
    Grid,
}

/// Set-membership estimation of ODE initial conditions and parameters.
#[derive(Parser, Debug)]
#[command(name = "occest", version)]
struct Args {
    /// Model file, or builtin:enzyme, builtin:static, builtin:disjoint
    #[arg(long)]
    model: String,
    #[arg(long, value_enum)]
    task: Task,
    /// Relaxation order d
    #[arg(long, default_value_t = 3)]
    order: u32,
    /// Slack for the strict inequalities of violation programs
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    localize_arcs: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid points per axis
    #[arg(long, default_value_t = 41)]
    grid: usize,
    /// Two variables spanning the grid, e.g. x1,p2
    #[arg(long, value_delimiter = ',')]
    project: Vec<String>,
    /// Fixed value (original units) of a variable off the grid, e.g. p3=5
    #[arg(long)]
    slice: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    solver_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Sampling attempts for --task sample and the emptiness check of --task inner
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Integration step of the consistency oracle
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Stored set for --task grid
    #[arg(long)]
    set: Option<PathBuf>,
    /// Per-iteration solver log on stderr
    #[arg(long)]
    verbose: bool,
}

/// Everything that determines the outputs.
#[derive(Serialize)]
struct RunConfig<'a> {
    task: Task,
    model: &'a str,
    model_sha256: String,
    order: u32,
    epsilon: f64,
    localize_arcs: bool,
    seed: u64,
    grid: usize,
    project: &'a [String],
    slice: &'a [String],
    solver_tol: f64,
    max_iter: usize,
    samples: usize,
    step: f64,
    set: Option<&'a Path>,
}

enum Failure {
    Usage(String),
    Parse(String),
    Solver(String),
    Certificate(String),
    Io(std::io::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) | Failure::Parse(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Certificate(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Parse(m) => write!(f, "parse error: {m}"),
            Failure::Solver(m) => write!(f, "solver failure: {m}"),
            Failure::Certificate(m) => write!(f, "certificate verification failed: {m}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(e) => Failure::Io(e),
            e => Failure::Parse(e.to_string()),
        }
    }
}

/// Output JSON: the payload plus the run's identity.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

struct Run {
    args: Args,
    model: EstimationModel,
    hash: String,
    outputs: Mutex<Vec<String>>,
}

impl Run {
    fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol_gap: self.args.solver_tol,
            tol_feas: self.args.solver_tol,
            max_iter: self.args.max_iter,
            verbose: self.args.verbose,
            ..SolverOptions::default()
        }
    }

    fn relax(&self) -> RelaxOptions {
        RelaxOptions {
            localize_arcs: self.args.localize_arcs,
            epsilon: self.args.epsilon,
            ..RelaxOptions::new(self.args.order)
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, Failure> {
        self.outputs.lock().unwrap().push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.args.out.join(name))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<(), Failure> {
        let stamped = Stamped { config_hash: &self.hash, seed: self.args.seed, body };
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &stamped).map_err(std::io::Error::from)?;
        writeln!(w)?;
        Ok(())
    }

    fn csv(&self, name: &str) -> Result<BufWriter<fs::File>, Failure> {
        let mut w = self.create(name)?;
        writeln!(w, "# config_hash={} seed={}", self.hash, self.args.seed)?;
        Ok(w)
    }
}

fn load(source: &str) -> Result<(String, ModelFile), Failure> {
    let file = match source.strip_prefix("builtin:") {
        Some("enzyme") => enzyme_file(),
        Some("static") => static_file(BoxForm::Linear),
        Some("disjoint") => disjoint_file(BoxForm::Linear),
        Some(other) => return Err(Failure::Usage(format!("unknown builtin model '{other}'"))),
        None => {
            let text = fs::read_to_string(source).map_err(|e| Failure::Parse(format!("{source}: {e}")))?;
            let file = ModelFile::from_json(&text)?;
            return Ok((text, file));
        }
    };
    Ok((file.to_json(), file))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("occest: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(args: Args) -> Result<(), Failure> {
    let start = Instant::now();
    if args.order < 1 {
        return Err(Failure::Usage("--order must be at least 1".into()));
    }
    if args.grid < 2 {
        return Err(Failure::Usage("--grid must be at least 2".into()));
    }
    let (text, file) = load(&args.model)?;
    let model = file.build()?;
    let config = RunConfig {
        task: args.task,
        model: &args.model,
        model_sha256: hex::encode(Sha256::digest(text.as_bytes())),
        order: args.order,
        epsilon: args.epsilon,
        localize_arcs: args.localize_arcs,
        seed: args.seed,
        grid: args.grid,
        project: &args.project,
        slice: &args.slice,
        solver_tol: args.solver_tol,
        max_iter: args.max_iter,
        samples: args.samples,
        step: args.step,
        set: args.set.as_deref(),
    };
    let config_json = serde_json::to_value(&config).expect("config serializes");
    let hash = hex::encode(Sha256::digest(config_json.to_string().as_bytes()));
    fs::create_dir_all(&args.out)?;
    let run = Run { args, model, hash, outputs: Mutex::new(Vec::new()) };

    let result = match run.args.task {
        Task::Outer => outer(&run),
        Task::Inner => inner(&run),
        Task::Certify => certify(&run),
        Task::Sample => sample(&run),
        Task::Grid => grid_task(&run),
    };

    let manifest = serde_json::json!({
        "tool": concat!("occest ", env!("CARGO_PKG_VERSION")),
        "config": config_json,
        "config_hash": run.hash,
        "seed": run.args.seed,
        "workers": run.args.workers,
        "outputs": *run.outputs.lock().unwrap(),
        "outcome": match &result { Ok(()) => "ok".to_string(), Err(f) => f.to_string() },
        "wall_time": start.elapsed().as_secs_f64(),
    });
    fs::write(run.args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n")?;
    result
}

fn outer(run: &Run) -> Result<(), Failure> {
    let program = build_outer_program(&run.model, &run.relax()).map_err(|e| Failure::Usage(e.to_string()))?;
    let result = program.solve(&run.solver()).map_err(|e| Failure::Solver(e.to_string()))?;
    let set = extract_set(&program, &result).map_err(|e| {
        Failure::Solver(format!(
            "{e} (status {}, residuals {:?}, verification residual {:.3e}, min eigenvalue {:.3e})",
            result.solution.status.name(),
            result.solution.residuals,
            result.report.max_residual,
            result.report.min_eigenvalue
        ))
    })?;
    let d = run.args.order;
    run.write_json(&format!("outer_d{d}.json"), &set)?;
    let grid = Grid::new(run)?;
    let mut w = run.csv(&format!("outer_d{d}_grid.csv"))?;
    writeln!(w, "{},v0,inside", grid.header())?;
    grid.for_each(|x, cols| writeln!(w, "{cols},{:.12e},{}", set.value(x), u8::from(set.contains(x))))?;
    eprintln!(
        "outer set at d = {d}: threshold {:.9}, integral of v0 {:.6}, {} iterations, {:.1} s",
        set.threshold, set.objective, set.iterations, set.wall_time
    );
    Ok(())
}

fn violation_file(idx: ViolationIndex) -> String {
    format!("violation_k{}_e{}.json", idx.kappa, idx.eta)
}

fn inner(run: &Run) -> Result<(), Failure> {
    let model = &run.model;
    let schedule = violation_schedule(model, false);
    let (relax, solver) = (run.relax(), run.solver());
    eprintln!("{} violation programs", schedule.len());

    let progress = |idx: ViolationIndex, r: &ViolationResult| {
        let label = match r {
            ViolationResult::Set(s) => format!("solved in {:.1} s", s.wall_time),
            ViolationResult::OutsidePrior => "outside the prior".into(),
            ViolationResult::Empty => "empty".into(),
            ViolationResult::Failed { reason } => format!("failed: {reason}"),
        };
        eprintln!("violation k={} e={}: {label}", idx.kappa, idx.eta);
    };
    let results = solve_violations(model, &schedule, &relax, &solver, run.args.workers, &progress);

    let bounds = model.measurements[0].bounding_box();
    let mut summary = Vec::new();
    for (idx, r) in &results {
        let label = &model.measurements[idx.kappa].inequalities[idx.eta].label;
        let (status, empty) = match r {
            ViolationResult::Set(s) => {
                let v = mc_volume(|x| s.contains(x), &bounds, run.args.samples, run.args.seed);
                ("solved", Some(v.value == 0.0))
            }
            ViolationResult::OutsidePrior => ("outside_prior", Some(true)),
            ViolationResult::Empty => ("empty", Some(true)),
            ViolationResult::Failed { .. } => ("failed", None),
        };
        summary.push(serde_json::json!({
            "kappa": idx.kappa,
            "eta": idx.eta,
            "constraint": label,
            "status": status,
            "empirically_empty": empty,
            "file": violation_file(*idx),
        }));
        run.write_json(&violation_file(*idx), r)?;
    }
    let inner = inner_from_outers(model, &schedule, results).map_err(|e| Failure::Solver(e.to_string()))?;
    let d = run.args.order;
    run.write_json(
        &format!("inner_d{d}.json"),
        serde_json::json!({
            "order": d,
            "programs": schedule.len(),
            "conservative_empty": inner.conservative_empty,
            "violations": summary,
        }),
    )?;

    let grid = Grid::new(run)?;
    let mut w = run.csv(&format!("inner_d{d}_grid.csv"))?;
    let names: Vec<String> = inner.violations.iter().map(|(i, _)| format!("outside_k{}_e{}", i.kappa, i.eta)).collect();
    writeln!(w, "{},in_prior,{},inside", grid.header(), names.join(","))?;
    grid.for_each(|x, cols| {
        let flags: Vec<&str> = inner
            .violations
            .iter()
            .map(|(_, r)| match r {
                ViolationResult::Set(s) => s.value(x) < s.threshold,
                ViolationResult::OutsidePrior | ViolationResult::Empty => true,
                ViolationResult::Failed { .. } => false,
            })
            .map(|b| if b { "1" } else { "0" })
            .collect();
        writeln!(w, "{cols},{},{},{}", u8::from(inner.in_prior(x)), flags.join(","), u8::from(inner.contains(x)))
    })?;
    if inner.conservative_empty {
        return Err(Failure::Solver("a violation program failed; the inner approximation is empty".into()));
    }
    Ok(())
}

fn certify(run: &Run) -> Result<(), Failure> {
    let program = build_certificate_program(&run.model, &run.relax()).map_err(|e| Failure::Usage(e.to_string()))?;
    let result = program.solve(&run.solver()).map_err(|e| Failure::Solver(e.to_string()))?;
    let d = run.args.order;
    let name = format!("certificate_d{d}.json");
    match extract_certificate(&program, &result) {
        CertificateOutcome::Found(c) => {
            eprintln!("inconsistent: certificate found at d = {d} (delta {:.3e})", c.delta);
            run.write_json(&name, serde_json::json!({ "found": true, "certificate": c }))
        }
        CertificateOutcome::NotFound { status } => {
            println!("no certificate at order {d}");
            run.write_json(&name, serde_json::json!({ "found": false, "status": status }))
        }
        CertificateOutcome::Unverified { report, delta } => {
            run.write_json(
                &name,
                serde_json::json!({ "found": false, "status": "unverified", "delta": delta, "verification": report }),
            )?;
            Err(Failure::Certificate(format!(
                "residual {:.3e}, min eigenvalue {:.3e}, delta {delta:.3e}",
                report.max_residual, report.min_eigenvalue
            )))
        }
    }
}

fn sample(run: &Run) -> Result<(), Failure> {
    let set = sample_consistent(&run.model, run.args.samples, run.args.seed, run.args.step);
    let mut w = run.csv("samples.csv")?;
    writeln!(w, "{}", coordinate_header(&run.model.names))?;
    for x in &set.points {
        writeln!(w, "{}", coordinate_cells(&run.model, x))?;
    }
    eprintln!("{} of {} samples consistent", set.points.len(), set.attempts);
    Ok(())
}

fn grid_task(run: &Run) -> Result<(), Failure> {
    let path = run.args.set.as_ref().ok_or_else(|| Failure::Usage("--task grid needs --set".into()))?;
    let set = SetApproximation::from_json(&fs::read_to_string(path)?).map_err(|e| Failure::Parse(e.to_string()))?;
    if set.names != run.model.names {
        return Err(Failure::Usage("the stored set belongs to a different model".into()));
    }
    let grid = Grid::new(run)?;
    let mut w = run.csv("grid.csv")?;
    writeln!(w, "{},v0,inside", grid.header())?;
    grid.for_each(|x, cols| writeln!(w, "{cols},{:.12e},{}", set.value(x), u8::from(set.contains(x))))
}

fn coordinate_header(names: &[String]) -> String {
    names.iter().flat_map(|n| [n.clone(), format!("{n}_scaled")]).collect::<Vec<_>>().join(",")
}

fn coordinate_cells(model: &EstimationModel, x: &[f64]) -> String {
    let original = model.scaling.to_original(x);
    original.iter().zip(x).map(|(o, s)| format!("{o:.12e},{s:.12e}")).collect::<Vec<_>>().join(",")
}

/// Evaluation points over the box of `X_0`: every variable when there are
/// at most three, otherwise the projected pair with the rest held fixed.
struct Grid<'a> {
    model: &'a EstimationModel,
    axes: Vec<usize>,
    base: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    res: usize,
}

impl<'a> Grid<'a> {
    fn new(run: &'a Run) -> Result<Self, Failure> {
        let model = &run.model;
        let n = model.n_states();
        let bounds = model.measurements[0].bounding_box();
        let lookup =
            |name: &str| model.variable(name).ok_or_else(|| Failure::Usage(format!("unknown variable '{name}'")));
        let axes: Vec<usize> = if n <= 3 {
            (0..n).collect()
        } else if run.args.project.is_empty() {
            vec![0, 1]
        } else {
            if run.args.project.len() != 2 {
                return Err(Failure::Usage("--project takes two variables".into()));
            }
            let a = run.args.project.iter().map(|v| lookup(v)).collect::<Result<Vec<_>, _>>()?;
            if a[0] == a[1] {
                return Err(Failure::Usage("--project variables must differ".into()));
            }
            a
        };
        let mut base_original =
            model.scaling.to_original(&bounds.iter().map(|(l, u)| 0.5 * (l + u)).collect::<Vec<_>>());
        for s in &run.args.slice {
            let (name, value) = s.split_once('=').ok_or_else(|| Failure::Usage(format!("bad --slice '{s}'")))?;
            let value: f64 = value.trim().parse().map_err(|_| Failure::Usage(format!("bad --slice '{s}'")))?;
            base_original[lookup(name.trim())?] = value;
        }
        let base = model.scaling.to_scaled(&base_original);
        Ok(Self { model, axes, base, bounds, res: run.args.grid })
    }

    fn header(&self) -> String {
        coordinate_header(&self.model.names)
    }

    fn for_each(&self, mut f: impl FnMut(&[f64], &str) -> std::io::Result<()>) -> Result<(), Failure> {
        let total = self.res.pow(self.axes.len() as u32);
        let mut x = self.base.clone();
        for k in 0..total {
            let mut rem = k;
            for &a in self.axes.iter().rev() {
                let i = rem % self.res;
                rem /= self.res;
                let (l, u) = self.bounds[a];
                x[a] = l + (u - l) * i as f64 / (self.res - 1) as f64;
            }
            f(&x, &coordinate_cells(self.model, &x))?;
        }
        Ok(())
    }
}
