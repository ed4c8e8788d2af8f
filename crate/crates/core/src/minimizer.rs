//! Constrained energy minimization
//! `min |h + dy|^2  subject to  P(h + dy) = 0`
//! over gauge-fixed potentials `y`, by an augmented Lagrangian method whose
//! inner problems are solved with Polak-Ribiere nonlinear conjugate
//! gradients and an exact quartic line search.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{EvalMode, FeasibilityReport, QuadraticConstraintSet, Verdict};
use crate::error::{contract, Error, Result};
use crate::grid::{codifferential_values, Cochain, TorusGrid};
use crate::hodge::{d_norm, HodgeSolveOptions, HodgeSolver};
use crate::io::{read_cochain_on, write_cochain, SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub outer_max: usize,
    pub penalty_init: f64,
    /// Applied when the constraint max-norm fails to halve.
    pub penalty_growth: f64,
    /// Max-norm of the pointwise constraint.
    pub constraint_tol: f64,
    /// Relative norm of the Lagrangian gradient in the potential.
    pub gradient_tol: f64,
    pub inner_max: usize,
    /// Relative gradient at which an inner solve stops.
    pub inner_tol: f64,
    /// Scale of a random coexact initial perturbation of `y` (0 = start at `h`).
    pub init_perturbation: f64,
    pub seed: u64,
    pub hodge: HodgeSolveOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            outer_max: 50,
            penalty_init: 1.0,
            penalty_growth: 2.0,
            constraint_tol: 1e-6,
            gradient_tol: 1e-6,
            inner_max: 500,
            inner_tol: 1e-7,
            init_perturbation: 0.0,
            seed: 0,
            hodge: HodgeSolveOptions::default(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.penalty_init, self.constraint_tol, self.gradient_tol, self.inner_tol];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return contract("penalty and tolerances must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return contract("penalty growth must exceed 1");
        }
        if self.inner_max == 0 {
            return contract("inner_max must be at least 1");
        }
        if !(self.init_perturbation >= 0.0) {
            return contract("init_perturbation must be non-negative");
        }
        self.hodge.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Converged,
    Infeasible,
    MaxIter,
}

/// Outer-loop state needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub rho: f64,
    pub previous_residual: f64,
    pub stalls: usize,
    pub outer_iterations: usize,
}

/// Per-outer-iteration diagnostics; entry 0 describes the initial point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub energy: Vec<f64>,
    pub constraint: Vec<f64>,
    pub gradient: Vec<f64>,
    pub class_drift: Vec<f64>,
    pub gauge_drift: Vec<f64>,
    pub penalty: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    /// Iterate satisfies the constraint tolerance.
    pub accepted: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub h: Vec<Cochain<f64>>,
    pub y: Vec<Cochain<f64>>,
    pub z: Vec<Cochain<f64>>,
    /// Multiplier per constraint, one value per top cell.
    pub mu: Vec<Vec<f64>>,
    pub state: SolverState,
    pub traces: Traces,
    pub harmonic_energy: f64,
    pub feasibility: FeasibilityReport,
    pub options: SolveOptions,
}

impl SolveReport {
    pub fn energy(&self) -> f64 {
        *self.traces.energy.last().expect("initial entry")
    }

    pub fn constraint_residual(&self) -> f64 {
        *self.traces.constraint.last().expect("initial entry")
    }

    pub fn gradient(&self) -> f64 {
        *self.traces.gradient.last().expect("initial entry")
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.h[0].grid()
    }
}

/// Relative slack allowed when checking monotonicity of accepted energies.
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Consecutive non-improving penalty escalations before declaring infeasibility.
pub const STALL_LIMIT: usize = 10;
/// Required residual reduction per outer iteration before the penalty grows.
pub const RESIDUAL_SHRINK: f64 = 0.5;

struct Problem<'a> {
    set: &'a QuadraticConstraintSet,
    hodge: HodgeSolver<f64>,
    h: Vec<Cochain<f64>>,
    vol: Vec<f64>,
}

fn energy(z: &[Cochain<f64>]) -> f64 {
    z.iter().map(|c| c.norm_sq()).sum()
}

fn tuple_inner(a: &[Cochain<f64>], b: &[Cochain<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.inner(y).expect("same shape")).sum()
}

impl Problem<'_> {
    fn z_of(&self, y: &[Cochain<f64>]) -> Result<Vec<Cochain<f64>>> {
        self.h.iter().zip(y).map(|(h, y)| h.add(&y.d()?)).collect()
    }

    fn constraint_values(&self, z: &[Cochain<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.set.evaluate(z)?.values)
    }

    /// W-gradient of the augmented Lagrangian in `y`, and its relative norm.
    fn gradient(&self, z: &[Cochain<f64>], mu: &[Vec<f64>], rho: f64) -> Result<(Vec<Cochain<f64>>, f64)> {
        let p = self.constraint_values(z)?;
        let weights: Vec<Vec<f64>> = p
            .iter()
            .zip(mu)
            .map(|(pk, mk)| pk.iter().zip(mk).zip(&self.vol).map(|((p, m), v)| v * (m + rho * p)).collect())
            .collect();
        let pen = self.set.derivative(z)?.adjoint(&weights)?;
        let grid = self.set.grid();
        let mut out = Vec::with_capacity(z.len());
        for (zi, gi) in z.iter().zip(pen) {
            let k = zi.degree();
            let w = grid.star_weights(k);
            let u: Vec<f64> = zi.values().iter().zip(w).zip(gi.values()).map(|((z, w), g)| 2.0 * w * z + g).collect();
            let mut t = grid.coboundary_transpose_values(k - 1, &u)?;
            for (x, wl) in t.iter_mut().zip(grid.star_weights(k - 1)) {
                *x /= wl;
            }
            out.push(Cochain::from_values(grid, k - 1, t)?);
        }
        let gn = tuple_inner(&out, &out).sqrt();
        let scale = 2.0 * energy(z).sqrt();
        Ok((out, if scale > 0.0 { gn / scale } else { gn }))
    }

    /// Exact minimizer of the quartic `t -> L(y + t s)`; 0 if no decrease.
    fn line_search(&self, z: &[Cochain<f64>], s: &[Cochain<f64>], mu: &[Vec<f64>], rho: f64) -> Result<f64> {
        let w: Vec<Cochain<f64>> = s.iter().map(|c| c.d()).collect::<Result<_>>()?;
        let p0 = self.constraint_values(z)?;
        let p1 = self.set.derivative(z)?.apply(&w)?;
        let p2 = self.constraint_values(&w)?;
        let mut c = [0.0; 5];
        c[1] = 2.0 * tuple_inner(z, &w);
        c[2] = energy(&w);
        for k in 0..p0.len() {
            for (i, v) in self.vol.iter().enumerate() {
                let (a, b, q, m) = (p0[k][i], p1[k][i], p2[k][i], mu[k][i]);
                c[1] += v * (m * b + rho * a * b);
                c[2] += v * (m * q + 0.5 * rho * (b * b + 2.0 * a * q));
                c[3] += v * rho * b * q;
                c[4] += v * 0.5 * rho * q * q;
            }
        }
        let f = |t: f64| t * (c[1] + t * (c[2] + t * (c[3] + t * c[4])));
        let mut best = 0.0;
        let mut best_val = 0.0;
        for t in cubic_roots(4.0 * c[4], 3.0 * c[3], 2.0 * c[2], c[1]) {
            let v = f(t);
            if v < best_val {
                best = t;
                best_val = v;
            }
        }
        Ok(best)
    }

    /// Inverse Hodge Laplacian on potentials, so that steps are measured by
    /// the exact forms they produce.
    fn precondition(&self, g: &[Cochain<f64>]) -> Result<Vec<Cochain<f64>>> {
        g.iter().map(|c| Ok(self.hodge.solve_laplacian(c, None)?.0)).collect()
    }

    /// Preconditioned Polak-Ribiere CG on the augmented Lagrangian; returns
    /// iterations and the final relative gradient.
    fn inner_solve(&self, y: &mut [Cochain<f64>], mu: &[Vec<f64>], rho: f64, opts: &SolveOptions) -> Result<(usize, f64)> {
        let neg = |v: &[Cochain<f64>]| v.iter().map(|c| c.scale(-1.0)).collect::<Vec<_>>();
        let mut z = self.z_of(y)?;
        let (mut g, mut rel) = self.gradient(&z, mu, rho)?;
        let mut p = self.precondition(&g)?;
        let mut s = neg(&p);
        let mut restarted = true;
        let mut it = 0;
        while rel > opts.inner_tol && it < opts.inner_max {
            let t = self.line_search(&z, &s, mu, rho)?;
            if t == 0.0 {
                if restarted {
                    break;
                }
                s = neg(&p);
                restarted = true;
                continue;
            }
            for (yi, si) in y.iter_mut().zip(&s) {
                yi.axpy(t, si)?;
            }
            z = self.z_of(y)?;
            let (g_new, rel_new) = self.gradient(&z, mu, rho)?;
            let p_new = self.precondition(&g_new)?;
            it += 1;
            rel = rel_new;
            let diff: Vec<Cochain<f64>> = p_new.iter().zip(&p).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
            let beta = (tuple_inner(&g_new, &diff) / tuple_inner(&g, &p)).max(0.0);
            s = p_new.iter().zip(&s).map(|(pn, si)| pn.scale(-1.0).add(&si.scale(beta))).collect::<Result<_>>()?;
            restarted = beta == 0.0;
            if tuple_inner(&s, &g_new) >= 0.0 {
                s = neg(&p_new);
                restarted = true;
            }
            g = g_new;
            p = p_new;
        }
        Ok((it, rel))
    }

    fn class_drift(&self, z: &[Cochain<f64>]) -> Result<f64> {
        let mut num = 0.0;
        for (zi, hi) in z.iter().zip(&self.h) {
            num += self.hodge.project_harmonic(zi)?.sub(hi)?.norm_sq();
        }
        Ok((num / energy(&self.h).max(f64::MIN_POSITIVE)).sqrt())
    }
}

/// Real roots of `a t^3 + b t^2 + c t + d`, polished by Newton steps.
pub fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return vec![];
    }
    let mut roots = Vec::new();
    if a.abs() <= 1e-14 * scale {
        if b.abs() <= 1e-14 * scale {
            if c != 0.0 {
                roots.push(-d / c);
            }
        } else {
            let disc = c * c - 4.0 * b * d;
            if disc >= 0.0 {
                let q = -0.5 * (c + c.signum() * disc.sqrt());
                if q != 0.0 {
                    roots.push(q / b);
                    roots.push(d / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
    } else {
        let (b, c, d) = (b / a, c / a, d / a);
        // Depressed cubic t = x - b/3: x^3 + p x + q = 0.
        let p = c - b * b / 3.0;
        let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
        let shift = -b / 3.0;
        let disc = q * q / 4.0 + p * p * p / 27.0;
        if disc > 0.0 {
            let u = (-q / 2.0 + disc.sqrt()).cbrt();
            let v = (-q / 2.0 - disc.sqrt()).cbrt();
            roots.push(u + v + shift);
        } else if p == 0.0 {
            roots.push(shift);
        } else {
            let r = (-p / 3.0).sqrt();
            let arg = (3.0 * q / (2.0 * p) / r).clamp(-1.0, 1.0);
            let th = arg.acos() / 3.0;
            for k in 0..3 {
                roots.push(2.0 * r * (th - std::f64::consts::TAU * k as f64 / 3.0).cos() + shift);
            }
        }
        for t in &mut roots {
            for _ in 0..2 {
                let f = ((*t + b) * *t + c) * *t + d;
                let df = (3.0 * *t + 2.0 * b) * *t + c;
                if df != 0.0 {
                    *t -= f / df;
                }
            }
        }
        return roots;
    }
    roots
}

fn check_harmonic(hodge: &HodgeSolver<f64>, h: &[Cochain<f64>]) -> Result<()> {
    for hi in h {
        let k = hi.degree();
        let g = hi.grid();
        let scale = hi.max_abs().max(f64::MIN_POSITIVE);
        if k < g.dim() {
            let dh = hi.d()?.max_abs() / scale;
            if dh > 1e-9 {
                return Err(Error::NotClosed { residual: dh });
            }
        }
        if k == 0 {
            return contract("potentials need forms of degree at least 1");
        }
        let del = Cochain::from_values(g, k - 1, codifferential_values(g, k, hi.values())?)?;
        let rel = del.norm() / (hi.norm() * d_norm(g)).max(f64::MIN_POSITIVE);
        if rel > 1e-9 {
            return contract(format!("input is not coclosed: relative |delta h| = {rel:e}"));
        }
        let _ = hodge;
    }
    Ok(())
}

fn setup<'a>(h: &[Cochain<f64>], set: &'a QuadraticConstraintSet, opts: &SolveOptions) -> Result<Problem<'a>> {
    opts.validate()?;
    if set.mode() != EvalMode::Collocation {
        return contract("the minimizer needs a collocation-mode constraint set");
    }
    let grid = set.grid();
    for hi in h {
        if !(Arc::ptr_eq(grid, hi.grid()) || **grid == **hi.grid()) {
            return Err(Error::GridMismatch("harmonic input and constraint set live on different grids".into()));
        }
    }
    let hodge = HodgeSolver::new(grid, opts.hodge.clone())?;
    Ok(Problem { set, hodge, h: h.to_vec(), vol: grid.measures(grid.dim()).to_vec() })
}

/// Minimize from `z = h` (or the configured random perturbation of it).
pub fn solve(h: &[Cochain<f64>], set: &QuadraticConstraintSet, opts: &SolveOptions) -> Result<SolveReport> {
    solve_from(h, set, opts, None)
}

/// Minimize starting from a closed representative `f` of the class of `h`.
pub fn solve_from(
    h: &[Cochain<f64>],
    set: &QuadraticConstraintSet,
    opts: &SolveOptions,
    start: Option<&[Cochain<f64>]>,
) -> Result<SolveReport> {
    let prob = setup(h, set, opts)?;
    check_harmonic(&prob.hodge, h)?;
    let feasibility = set.feasibility_screen(h)?;
    if feasibility.verdict == Verdict::Infeasible {
        let total = feasibility.totals.iter().cloned().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        return Err(Error::Infeasible { total, threshold: feasibility.threshold });
    }
    let grid = set.grid().clone();
    let mut y: Vec<Cochain<f64>> = Vec::with_capacity(h.len());
    for (i, hi) in h.iter().enumerate() {
        let k = hi.degree();
        let mut yi = Cochain::zeros(&grid, k - 1)?;
        if let Some(f) = start {
            let fi = f.get(i).ok_or(Error::DimensionMismatch { expected: h.len(), found: f.len() })?;
            if fi.degree() != k {
                return Err(Error::DegreeOutOfRange { degree: fi.degree(), dim: grid.dim() });
            }
            let diff = fi.sub(hi)?;
            if k < grid.dim() && diff.d()?.max_abs() > 1e-9 * fi.max_abs().max(f64::MIN_POSITIVE) {
                return Err(Error::NotClosed { residual: diff.d()?.max_abs() });
            }
            let rhs = Cochain::from_values(&grid, k - 1, codifferential_values(&grid, k, diff.values())?)?;
            yi = prob.hodge.solve_laplacian(&rhs, None)?.0;
        }
        if opts.init_perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            let noise: Vec<f64> = (0..grid.num_cells(k - 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let noise = Cochain::from_values(&grid, k - 1, noise)?;
            let scale = opts.init_perturbation * hi.norm() / noise.d()?.norm().max(f64::MIN_POSITIVE);
            yi.axpy(scale, &noise)?;
        }
        y.push(prob.hodge.gauge_fix(&yi)?);
    }
    let z = prob.z_of(&y)?;
    let p = prob.constraint_values(&z)?;
    let mu = vec![vec![0.0; grid.n_vertices()]; set.count()];
    let residual = max_abs(&p);
    let (_, grad) = prob.gradient(&z, &mu, 0.0)?;
    let e = energy(&z);
    let traces = Traces {
        energy: vec![e],
        constraint: vec![residual],
        gradient: vec![grad],
        class_drift: vec![prob.class_drift(&z)?],
        gauge_drift: vec![0.0],
        penalty: vec![opts.penalty_init],
        inner_iterations: vec![0],
        accepted: vec![residual <= opts.constraint_tol],
    };
    let converged = residual <= opts.constraint_tol && grad <= opts.gradient_tol;
    let report = SolveReport {
        status: if converged { SolveStatus::Converged } else { SolveStatus::MaxIter },
        h: h.to_vec(),
        y,
        z,
        mu,
        state: SolverState { rho: opts.penalty_init, previous_residual: residual, stalls: 0, outer_iterations: 0 },
        traces,
        harmonic_energy: energy(h),
        feasibility,
        options: opts.clone(),
    };
    if converged {
        return Ok(report);
    }
    run(&prob, report, opts)
}

/// Continue a run for up to `opts.outer_max` further outer iterations.
pub fn resume(report: &SolveReport, set: &QuadraticConstraintSet, opts: &SolveOptions) -> Result<SolveReport> {
    if !(**report.grid() == **set.grid()) {
        return Err(Error::GridMismatch("report grid differs from the constraint grid".into()));
    }
    if report.h.len() != set.arity() {
        return Err(Error::DimensionMismatch { expected: set.arity(), found: report.h.len() });
    }
    if report.status != SolveStatus::MaxIter {
        return Ok(report.clone());
    }
    let prob = setup(&report.h, set, opts)?;
    let mut r = report.clone();
    r.options = opts.clone();
    run(&prob, r, opts)
}

fn max_abs(p: &[Vec<f64>]) -> f64 {
    p.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn run(prob: &Problem<'_>, mut r: SolveReport, opts: &SolveOptions) -> Result<SolveReport> {
    for _ in 0..opts.outer_max {
        let rho = r.state.rho;
        let (inner, grad) = prob.inner_solve(&mut r.y, &r.mu, rho, opts)?;
        let before = energy(&prob.z_of(&r.y)?);
        for yi in r.y.iter_mut() {
            *yi = prob.hodge.gauge_fix(yi)?;
        }
        let z = prob.z_of(&r.y)?;
        let e = energy(&z);
        let p = prob.constraint_values(&z)?;
        let residual = max_abs(&p);
        for (mk, pk) in r.mu.iter_mut().zip(&p) {
            for (m, v) in mk.iter_mut().zip(pk) {
                *m += rho * v;
            }
        }
        let t = &mut r.traces;
        t.energy.push(e);
        t.constraint.push(residual);
        t.gradient.push(grad);
        t.class_drift.push(prob.class_drift(&z)?);
        t.gauge_drift.push((e - before).abs() / before.max(f64::MIN_POSITIVE));
        t.penalty.push(rho);
        t.inner_iterations.push(inner);
        t.accepted.push(residual <= opts.constraint_tol);
        r.z = z;
        r.state.outer_iterations += 1;
        if residual <= opts.constraint_tol && grad <= opts.gradient_tol {
            r.status = SolveStatus::Converged;
            r.state.previous_residual = residual;
            return Ok(r);
        }
        if residual > RESIDUAL_SHRINK * r.state.previous_residual {
            r.state.rho *= opts.penalty_growth;
            if residual >= r.state.previous_residual {
                r.state.stalls += 1;
            } else {
                r.state.stalls = 0;
            }
            if r.state.stalls >= STALL_LIMIT {
                r.status = SolveStatus::Infeasible;
                r.state.previous_residual = residual;
                return Ok(r);
            }
        } else {
            r.state.stalls = 0;
        }
        r.state.previous_residual = residual;
    }
    r.status = SolveStatus::MaxIter;
    Ok(r)
}

/// Largest relative energy increase between consecutive accepted iterates.
pub fn accepted_energy_rise(t: &Traces) -> f64 {
    let mut last: Option<f64> = None;
    let mut worst: f64 = 0.0;
    for (e, &ok) in t.energy.iter().zip(&t.accepted) {
        if ok {
            if let Some(prev) = last {
                worst = worst.max((e - prev) / prev.abs().max(f64::MIN_POSITIVE));
            }
            last = Some(*e);
        }
    }
    worst
}

/// True when the energies of accepted iterates never increase by more than
/// the relative slack.
pub fn accepted_energy_monotone(t: &Traces) -> bool {
    let mut last: Option<f64> = None;
    for (e, &ok) in t.energy.iter().zip(&t.accepted) {
        if !ok {
            continue;
        }
        if let Some(prev) = last {
            if *e > prev * (1.0 + MONOTONE_SLACK) {
                return false;
            }
        }
        last = Some(*e);
    }
    true
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    status: SolveStatus,
    state: SolverState,
    traces: Traces,
    harmonic_energy: f64,
    feasibility: FeasibilityReport,
    options: SolveOptions,
    arity: usize,
    constraints: usize,
    files: Vec<String>,
}

impl SolveReport {
    /// Write `manifest.json` and cochain CSV files (`h_i`, `y_i`, `z_i`, `mu_k`)
    /// into `dir`. Multiplier files hold pointwise values in the top-cell slots.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let grid = self.grid();
        for (name, list) in [("h", &self.h), ("y", &self.y), ("z", &self.z)] {
            for (i, c) in list.iter().enumerate() {
                let f = format!("{name}_{i}.csv");
                write_cochain(&dir.join(&f), c)?;
                files.push(f);
            }
        }
        for (k, m) in self.mu.iter().enumerate() {
            let f = format!("mu_{k}.csv");
            write_cochain(&dir.join(&f), &Cochain::from_values(grid, grid.dim(), m.clone())?)?;
            files.push(f);
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            status: self.status,
            state: self.state.clone(),
            traces: self.traces.clone(),
            harmonic_energy: self.harmonic_energy,
            feasibility: self.feasibility.clone(),
            options: self.options.clone(),
            arity: self.h.len(),
            constraints: self.mu.len(),
            files,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Load a saved report; every cochain must live on `grid`.
    pub fn load(dir: &Path, grid: &Arc<TorusGrid>) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported schema version {}", manifest.schema_version)));
        }
        let read = |name: &str, i: usize| read_cochain_on(&dir.join(format!("{name}_{i}.csv")), grid);
        let h = (0..manifest.arity).map(|i| read("h", i)).collect::<Result<Vec<_>>>()?;
        let y = (0..manifest.arity).map(|i| read("y", i)).collect::<Result<Vec<_>>>()?;
        let z = (0..manifest.arity).map(|i| read("z", i)).collect::<Result<Vec<_>>>()?;
        let mu = (0..manifest.constraints).map(|k| read("mu", k).map(Cochain::into_values)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            status: manifest.status,
            h,
            y,
            z,
            mu,
            state: manifest.state,
            traces: manifest.traces,
            harmonic_energy: manifest.harmonic_energy,
            feasibility: manifest.feasibility,
            options: manifest.options,
        })
    }
}

#[cfg(test)]
mod tests;
