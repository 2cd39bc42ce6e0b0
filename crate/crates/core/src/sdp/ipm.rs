//! Homogeneous self-dual predictor-corrector iteration.
//!
//! Embedding residuals for an iterate `(x, y, s, tau, kappa)`:
//!
//! ```text
//! rp = b tau - A x
//! rd = c tau - A'y - s
//! rg = kappa + c'x - b'y
//! ```
//!
//! Every Newton step reduces all three by the factor `1 - eta` while moving
//! the complementarity products towards `sigma mu`.

use super::cones::{BlockScaling, ConeSet};
use super::kkt::Kkt;
use super::linalg::{dot, norm2, norm_inf};
use super::{ConicProblem, Residuals, Solution, SolverOptions, SparseMatrix, Status};

const STEP_FRACTION: f64 = 0.99;
const MIN_STEP: f64 = 1e-10;
const STALL_MERIT: f64 = 1e-4;
const STALL_FACTOR: f64 = 10.0;
const STALL_ITERS: usize = 3;

struct Dir {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Scaled {
    a: SparseMatrix,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Row scale: scaled row `i` is the original row divided by `d[i]`.
    d: Vec<f64>,
    beta: f64,
    gamma: f64,
}

fn equilibrate(p: &ConicProblem) -> Scaled {
    let m = p.num_rows();
    let mut d = vec![1.0; m];
    for (r, dr) in d.iter_mut().enumerate() {
        let n: f64 = p.a.row(r).map(|(_, v)| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            *dr = n;
        }
    }
    let mut a = p.a.clone();
    for r in 0..m {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            a.values[k] /= d[r];
        }
    }
    let mut b: Vec<f64> = p.b.iter().zip(&d).map(|(v, s)| v / s).collect();
    let beta = norm_inf(&b).max(1.0);
    b.iter_mut().for_each(|v| *v /= beta);
    let gamma = norm_inf(&p.c).max(1.0);
    let c = p.c.iter().map(|v| v / gamma).collect();
    Scaled { a, b, c, d, beta, gamma }
}

pub(super) fn run(p: &ConicProblem, opt: &SolverOptions) -> Solution {
    let cones = ConeSet::new(&p.cones);
    let sp = equilibrate(p);
    let (m, n) = (p.num_rows(), p.num_vars());
    let mut kkt = Kkt::new(&sp.a, &cones);

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    cones.set_identity(&mut x);
    cones.set_identity(&mut s);
    let mut y = vec![0.0; m];
    let (mut tau, mut kappa) = (1.0f64, 1.0f64);

    let bnorm = norm2(&p.b);
    let cnorm = norm2(&p.c);
    let mut last = Solution {
        status: Status::MaxIter { reason: "iteration limit".into() },
        z: vec![0.0; n],
        y: vec![0.0; m],
        s: vec![0.0; n],
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        residuals: Residuals::default(),
        iterations: 0,
    };

    // best iterate by max(pres, dres, gap); returned when the run ends early
    let mut best: Option<(f64, Solution)> = None;
    let mut degraded = 0;
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    for iter in 0..=opt.max_iter {
        // --- unscaled iterate and termination
        let xo: Vec<f64> = x.iter().map(|v| v * sp.beta / tau).collect();
        let yraw: Vec<f64> = y.iter().zip(&sp.d).map(|(v, d)| v * sp.gamma / d).collect();
        let yo: Vec<f64> = yraw.iter().map(|v| v / tau).collect();
        let so: Vec<f64> = s.iter().map(|v| v * sp.gamma / tau).collect();
        p.a.mul_vec(&xo, &mut ax);
        p.a.mul_t_vec(&yo, &mut aty);
        let pres: f64 = norm2(&ax.iter().zip(&p.b).map(|(l, r)| l - r).collect::<Vec<_>>()) / (1.0 + bnorm);
        let dres: f64 = norm2(&(0..n).map(|i| aty[i] + so[i] - p.c[i]).collect::<Vec<_>>()) / (1.0 + cnorm);
        let pobj = dot(&p.c, &xo);
        let dobj = dot(&p.b, &yo);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        last = Solution {
            status: Status::MaxIter { reason: "iteration limit".into() },
            z: xo,
            y: yo,
            s: so,
            primal_objective: pobj,
            dual_objective: dobj,
            residuals: Residuals { primal: pres, dual: dres, gap },
            iterations: iter,
        };
        if opt.verbose {
            eprintln!(
                "{iter:3} pobj {pobj:+.8e} dobj {dobj:+.8e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {tau:.2e} kappa {kappa:.2e}"
            );
        }
        if pres <= opt.tol_feas && dres <= opt.tol_feas && gap <= opt.tol_gap {
            last.status = Status::Optimal;
            return last;
        }
        let merit = pres.max(dres).max(gap);
        match &best {
            Some((b, _)) if merit >= *b => {
                // accuracy lost after near convergence: further steps only drift
                degraded = if *b < STALL_MERIT && merit > STALL_FACTOR * *b { degraded + 1 } else { 0 };
                if degraded >= STALL_ITERS {
                    return fail(best.map(|b| b.1).unwrap_or(last), "numerical stall".into());
                }
            }
            _ => {
                best = Some((merit, last.clone()));
                degraded = 0;
            }
        }
        if let Some(ray) = primal_ray(p, &cones, &yraw, opt.tol_infeas) {
            last.status = Status::PrimalInfeasible { ray };
            return last;
        }
        let xraw: Vec<f64> = x.iter().map(|v| v * sp.beta).collect();
        if let Some(ray) = dual_ray(p, &cones, &xraw, opt.tol_infeas) {
            last.status = Status::DualInfeasible { ray };
            return last;
        }
        if iter == opt.max_iter {
            break;
        }
        let fail = |last: Solution, reason: String| fail(best.clone().map(|b| b.1).unwrap_or(last), reason);

        // --- Newton step on the scaled problem
        let sc = match cones.scalings(&x, &s) {
            Ok(sc) => sc,
            Err(e) => return fail(last, e),
        };
        if let Err(e) = kkt.factor(&cones, &sc) {
            return fail(last, e);
        }
        let mut rp = sp.b.iter().map(|v| v * tau).collect::<Vec<_>>();
        let mut tmp = vec![0.0; m];
        sp.a.mul_vec(&x, &mut tmp);
        rp.iter_mut().zip(&tmp).for_each(|(r, v)| *r -= v);
        let mut rd = vec![0.0; n];
        sp.a.mul_t_vec(&y, &mut rd);
        for i in 0..n {
            rd[i] = sp.c[i] * tau - rd[i] - s[i];
        }
        let rg = kappa + dot(&sp.c, &x) - dot(&sp.b, &y);
        let mu = (cones.conic_dot(&x, &s) + tau * kappa) / (cones.degree as f64 + 1.0);

        let ctx = Ctx { sp: &sp, cones: &cones, kkt: &kkt, sc: &sc, x: &x, tau, kappa, rp: &rp, rd: &rd, rg };
        let tau_dir = ctx.tau_direction();

        let aff = ctx.direction(&tau_dir, 1.0, 0.0, None);
        let alpha_aff = ctx.max_step(&aff, &s).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);
        let dir = ctx.direction(&tau_dir, 1.0 - sigma, sigma * mu, Some(&aff));
        let alpha = (STEP_FRACTION * ctx.max_step(&dir, &s)).min(1.0);
        if opt.verbose {
            eprintln!(
                "    sigma {sigma:.2e} alpha_aff {alpha_aff:.2e} alpha {alpha:.2e} reg {} mu {mu:.2e}",
                kkt.regularized
            );
        }
        if !alpha.is_finite() || alpha < MIN_STEP {
            return fail(last, format!("step length {alpha:.1e} too small"));
        }
        for i in 0..n {
            x[i] += alpha * dir.dx[i];
            s[i] += alpha * dir.ds[i];
        }
        for i in 0..m {
            y[i] += alpha * dir.dy[i];
        }
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        if !(tau > 0.0 && kappa > 0.0) || x.iter().chain(&y).chain(&s).any(|v| !v.is_finite()) {
            return fail(last, "iterate lost positivity".into());
        }
        // keep the embedding well scaled
        let norm = (tau + kappa).max(1e-300);
        if !(1e-8..=1e8).contains(&norm) {
            let f = 1.0 / norm;
            x.iter_mut().chain(y.iter_mut()).chain(s.iter_mut()).for_each(|v| *v *= f);
            tau *= f;
            kappa *= f;
        }
    }
    fail(best.map(|b| b.1).unwrap_or(last), "iteration limit".into())
}

fn fail(mut last: Solution, reason: String) -> Solution {
    last.status = Status::MaxIter { reason };
    last
}

/// Normalized Farkas ray `y` (`b'y = 1`, `-A'y` in `K*`) if the dual
/// iterate certifies primal infeasibility to `tol`.
fn primal_ray(p: &ConicProblem, cones: &ConeSet, yraw: &[f64], tol: f64) -> Option<Vec<f64>> {
    let by = dot(&p.b, yraw);
    if !(by > 0.0) {
        return None;
    }
    let ray: Vec<f64> = yraw.iter().map(|v| v / by).collect();
    let mut aty = vec![0.0; p.num_vars()];
    p.a.mul_t_vec(&ray, &mut aty);
    let neg: Vec<f64> = aty.iter().map(|v| -v).collect();
    (dual_cone_violation(cones, &neg) <= tol).then_some(ray)
}

/// Normalized improving ray `z in K`, `A z = 0`, `c'z = -1`.
fn dual_ray(p: &ConicProblem, cones: &ConeSet, xraw: &[f64], tol: f64) -> Option<Vec<f64>> {
    let cx = dot(&p.c, xraw);
    if !(cx < 0.0) {
        return None;
    }
    let ray: Vec<f64> = xraw.iter().map(|v| -v / cx).collect();
    let mut az = vec![0.0; p.num_rows()];
    p.a.mul_vec(&ray, &mut az);
    (norm_inf(&az) <= tol && cone_violation(cones, &ray) <= tol).then_some(ray)
}

/// How far `v` is from `K*` (free blocks must vanish).
pub(super) fn dual_cone_violation(cones: &ConeSet, v: &[f64]) -> f64 {
    let free = cones.free.iter().fold(0.0f64, |m, &i| m.max(v[i].abs()));
    free.max(cone_violation(cones, v))
}

/// How far `v` is from `K` on its conic blocks.
pub(super) fn cone_violation(cones: &ConeSet, v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for b in &cones.blocks {
        let part = &v[b.offset..b.offset + b.dim];
        let e = match b.kind {
            super::cones::Kind::Nonneg => part.iter().fold(f64::INFINITY, |m, x| m.min(*x)),
            super::cones::Kind::Psd => super::linalg::sym_eigenvalues(super::linalg::smat(part, b.n).as_ref())
                .into_iter()
                .fold(f64::INFINITY, f64::min),
        };
        if e.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(-e);
    }
    worst
}

struct Ctx<'a> {
    sp: &'a Scaled,
    cones: &'a ConeSet,
    kkt: &'a Kkt,
    sc: &'a [BlockScaling],
    x: &'a [f64],
    tau: f64,
    kappa: f64,
    rp: &'a [f64],
    rd: &'a [f64],
    rg: f64,
}

/// Solution of the system with the `dtau` coefficient as right-hand side.
struct TauDir {
    dy: Vec<f64>,
    dx: Vec<f64>,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.x.len()
    }

    fn h(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.cones.apply_h(self.sc, v, &mut out);
        out
    }

    fn kkt_solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let apply = |dy: &[f64], dxf: &[f64]| {
            let mut aty = vec![0.0; self.n()];
            self.sp.a.mul_t_vec(dy, &mut aty);
            let mut v = self.h(&aty);
            for (f, &g) in self.cones.free.iter().enumerate() {
                v[g] = dxf[f];
            }
            let mut k1 = vec![0.0; dy.len()];
            self.sp.a.mul_vec(&v, &mut k1);
            let k2: Vec<f64> = self.cones.free.iter().map(|&g| aty[g]).collect();
            (k1, k2)
        };
        self.kkt.solve(r1, r2, &apply)
    }

    /// `dx` from `dy`, `dxf` and the conic offset `u`: `u + H A'dy` on cones.
    fn assemble_dx(&self, u: &[f64], dy: &[f64], dxf: &[f64]) -> Vec<f64> {
        let mut aty = vec![0.0; self.n()];
        self.sp.a.mul_t_vec(dy, &mut aty);
        let mut dx = self.h(&aty);
        dx.iter_mut().zip(u).for_each(|(d, v)| *d += v);
        for (f, &g) in self.cones.free.iter().enumerate() {
            dx[g] = dxf[f];
        }
        dx
    }

    fn tau_direction(&self) -> TauDir {
        let hc = self.h(&self.sp.c);
        let mut r1 = vec![0.0; self.sp.b.len()];
        self.sp.a.mul_vec(&hc, &mut r1);
        r1.iter_mut().zip(&self.sp.b).for_each(|(r, b)| *r += b);
        let r2: Vec<f64> = self.cones.free.iter().map(|&g| self.sp.c[g]).collect();
        let (dy, dxf) = self.kkt_solve(&r1, &r2);
        let u: Vec<f64> = hc.iter().map(|v| -v).collect();
        let dx = self.assemble_dx(&u, &dy, &dxf);
        TauDir { dy, dx }
    }

    fn direction(&self, td: &TauDir, eta: f64, sigma_mu: f64, affine: Option<&Dir>) -> Dir {
        let n = self.n();
        let q: Vec<f64> = self.rd.iter().map(|v| eta * v).collect();
        let mut rk = vec![0.0; n];
        self.cones.comp_rhs(self.sc, self.x, sigma_mu, affine.map(|d| (d.dx.as_slice(), d.ds.as_slice())), &mut rk);
        let r_tau = sigma_mu - self.tau * self.kappa - affine.map_or(0.0, |d| d.dtau * d.dkappa);

        let hq = self.h(&q);
        let u: Vec<f64> = rk.iter().zip(&hq).map(|(a, b)| a - b).collect();
        let mut r1 = vec![0.0; self.rp.len()];
        self.sp.a.mul_vec(&u, &mut r1);
        for (r, p) in r1.iter_mut().zip(self.rp) {
            *r = eta * p - *r;
        }
        let r2: Vec<f64> = self.cones.free.iter().map(|&g| q[g]).collect();
        let (dy1, dxf1) = self.kkt_solve(&r1, &r2);
        let dx1 = self.assemble_dx(&u, &dy1, &dxf1);

        let (c, b) = (&self.sp.c, &self.sp.b);
        let num = eta * self.rg + r_tau / self.tau + dot(c, &dx1) - dot(b, &dy1);
        let den = -dot(c, &td.dx) + dot(b, &td.dy) + self.kappa / self.tau;
        let dtau = num / den;
        let dy: Vec<f64> = dy1.iter().zip(&td.dy).map(|(a, b)| a + dtau * b).collect();
        let dx: Vec<f64> = dx1.iter().zip(&td.dx).map(|(a, b)| a + dtau * b).collect();
        let mut ds = vec![0.0; n];
        self.sp.a.mul_t_vec(&dy, &mut ds);
        for i in 0..n {
            ds[i] = q[i] - ds[i] + c[i] * dtau;
        }
        for &g in &self.cones.free {
            ds[g] = 0.0;
        }
        let dkappa = (r_tau - self.kappa * dtau) / self.tau;
        Dir { dx, dy, ds, dtau, dkappa }
    }

    fn max_step(&self, d: &Dir, s: &[f64]) -> f64 {
        let mut a = self.cones.max_step(self.sc, &d.dx, &d.ds, self.x, s);
        if d.dtau < 0.0 {
            a = a.min(-self.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            a = a.min(-self.kappa / d.dkappa);
        }
        a
    }
}
