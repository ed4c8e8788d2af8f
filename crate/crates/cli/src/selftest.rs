//! Built-in invariant suite: small, fast instances of the properties the
//! toolkit relies on. The command fails iff any check fails.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nlharm::analysis::ball_energies;
use nlharm::constraint::{EvalMode, QuadraticConstraintSet};
use nlharm::framecalc::{frame_equations, BochnerVariant, FormField2, FrameCalc, FrameOptions, MetricField};
use nlharm::hodge::{HodgeSolveOptions, HodgeSolver};
use nlharm::io::{read_cochain, write_cochain};
use nlharm::minimizer::{solve, SolveOptions};
use nlharm::optimality::{variation_report, VectorFieldSpec};
use nlharm::{Cochain, Error, FormField, GridSpec, MetricSpec, MultiVector, Result, TorusGrid};

use crate::args::SelftestArgs;
use crate::artifacts::{Artifacts, Manifest};
use crate::{row, CliError, Outcome, EXIT_DOMAIN, EXIT_OK};

pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub error: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.value <= self.tolerance
    }
}

fn grid(dim: usize, m: usize, metric: MetricSpec) -> Result<Arc<TorusGrid>> {
    TorusGrid::new(GridSpec::unit(dim, m).with_metric(metric))
}

fn coordinate(g: &Arc<TorusGrid>, mask: usize) -> Result<Cochain<f64>> {
    let h = g.spacing();
    let vol: f64 = (0..g.dim()).filter(|i| mask & (1 << i) != 0).map(|i| h[i]).product();
    Cochain::coordinate_form(g, mask, 1.0, vol)
}

fn dd_zero(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (dim, m) in [(2, 6), (3, 4), (4, 4)] {
        let g = grid(dim, m, MetricSpec::conformal(dim, 0.2, 0))?;
        for k in 0..dim - 1 {
            // Integer values keep every sum exact, so d(d c) must be exactly zero.
            let vals = (0..g.num_cells(k)).map(|_| rng.gen_range(-1000..1000) as f64).collect();
            let c = Cochain::from_values(&g, k, vals)?;
            worst = worst.max(c.d()?.d()?.max_abs());
        }
    }
    Ok(worst)
}

fn hodge_decomposition(rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = grid(4, 4, MetricSpec::conformal(4, 0.2, 0))?;
    let solver = HodgeSolver::<f64>::new(&g, HodgeSolveOptions::default())?;
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let vals = (0..g.num_cells(2)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = solver.decompose(&Cochain::from_values(&g, 2, vals)?)?;
        worst = worst.max(d.reconstruction_residual).max(d.orthogonality);
    }
    Ok(worst)
}

fn betti(dim: usize, m: usize) -> Result<f64> {
    let g = grid(dim, m, MetricSpec::conformal(dim, 0.2, 0))?;
    let solver = HodgeSolver::<f64>::new(&g, HodgeSolveOptions::default())?;
    let mut mismatches = 0;
    let mut binom = 1;
    for k in 0..=dim {
        if solver.betti(k)?.betti != binom {
            mismatches += 1;
        }
        binom = binom * (dim - k) / (k + 1);
    }
    Ok(mismatches as f64)
}

fn fixed_point() -> Result<f64> {
    let g = grid(4, 4, MetricSpec::flat())?;
    let h = coordinate(&g, 0b0011)?;
    let set = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation)?;
    let r = solve(std::slice::from_ref(&h), &set, &SolveOptions::default())?;
    Ok((r.energy() - 1.0).abs().max(r.constraint_residual()))
}

fn infeasible_refused() -> Result<f64> {
    let g = grid(4, 4, MetricSpec::flat())?;
    let h = coordinate(&g, 0b0011)?.add(&coordinate(&g, 0b1100)?)?;
    let set = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation)?;
    match solve(&[h], &set, &SolveOptions::default()) {
        Err(Error::Infeasible { .. }) => Ok(0.0),
        _ => Ok(1.0),
    }
}

fn bochner_flat() -> Result<f64> {
    let metric = MetricField::flat();
    let form = FormField2::new("block", |_| [2.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let calc = FrameCalc::new(&metric, &form, FrameOptions::default())?;
    let mut worst: f64 = 0.0;
    for x in metric.sample_points(4, 1) {
        let r = calc.bochner_residual(&x, BochnerVariant::Critical)?;
        worst = worst.max(r.residual.abs());
        worst = r.terms.iter().fold(worst, |w, t| w.max(t.value.abs()));
        worst = frame_equations(&calc.packet(&x)?).iter().fold(worst, |w, e| w.max(e.abs()));
    }
    Ok(worst)
}

fn ball_volume() -> Result<f64> {
    let g = grid(4, 8, MetricSpec::flat())?;
    let z = FormField::from_fn(&g, |_| MultiVector::from_mask(4, 0b0011, 1.0));
    let r = 0.25;
    let e = ball_energies(&z, &[0.5; 4], &[r], 2)?[0];
    let exact = PI * PI * r.powi(4) / 2.0;
    Ok((e - exact).abs() / exact)
}

fn translations() -> Result<f64> {
    let g = grid(4, 4, MetricSpec::flat())?;
    let z = FormField::from_fn(&g, |x| MultiVector::from_mask(4, 0b0011, 1.0 + 0.3 * (2.0 * PI * x[2]).sin()));
    let mut worst: f64 = 0.0;
    for axis in 0..4 {
        let mut dir = [0.0; 4];
        dir[axis] = 1.0;
        let r = variation_report(&z, &VectorFieldSpec::translation(&g, &dir)?, None)?;
        worst = worst.max(r.first_variation.abs()).max(r.second_variation_v1.abs());
    }
    Ok(worst)
}

fn roundtrip(dir: &Path, rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = grid(3, 3, MetricSpec::conformal(3, 0.3, 1))?;
    let vals = (0..g.num_cells(2)).map(|_| rng.gen_range(-1.0..1.0) * 1e3f64.powi(rng.gen_range(-3..3))).collect();
    let c = Cochain::from_values(&g, 2, vals)?;
    let path = dir.join("roundtrip.csv");
    write_cochain(&path, &c)?;
    let back = read_cochain(&path)?;
    let same = back.values().iter().zip(c.values()).all(|(a, b)| a.to_bits() == b.to_bits()) && **back.grid() == *g;
    Ok(if same { 0.0 } else { 1.0 })
}

/// Run every check; `scratch` receives temporary files.
pub fn suite(seed: u64, scratch: &Path) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &'static str, tolerance: f64, r: Result<f64>| {
        let (value, error) = match r {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        out.push(Check { name, value, tolerance, error });
    };
    push("coboundary_squares_to_zero", 0.0, dd_zero(&mut rng));
    push("hodge_decomposition", 1e-9, hodge_decomposition(&mut rng));
    push("betti_t2", 0.0, betti(2, 6));
    push("betti_t4", 0.0, betti(4, 4));
    push("feasible_fixed_point", 1e-9, fixed_point());
    push("infeasible_class_refused", 0.0, infeasible_refused());
    push("bochner_flat_block", 1e-9, bochner_flat());
    push("ball_volume", 1e-3, ball_volume());
    push("translation_variations", 1e-11, translations());
    push("cochain_roundtrip", 0.0, roundtrip(scratch, &mut rng));
    out
}

pub fn run(a: &SelftestArgs) -> std::result::Result<Outcome, CliError> {
    let mut art = Artifacts::create(&a.out)?;
    let checks = suite(a.seed, art.dir());
    let _ = std::fs::remove_file(art.dir().join("roundtrip.csv"));
    let _ = std::fs::remove_file(art.dir().join("roundtrip.json"));
    let rows: Vec<_> =
        checks.iter().map(|c| row![c.name, c.value, c.tolerance, c.passed(), c.error.clone().unwrap_or_default()]).collect();
    art.table("selftest.csv", &["check", "value", "tolerance", "passed", "error"], &rows)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    let mut m = Manifest::new("selftest", json!({ "seed": a.seed }));
    m.status = if failed.is_empty() { "PASS" } else { "FAIL" }.into();
    m.results = json!({ "checks": checks.len(), "failed": failed });
    let mut summary = String::new();
    for c in &checks {
        summary += &format!("{} {} ({:e} <= {:e})\n", if c.passed() { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    let code = if failed.is_empty() { EXIT_OK } else { EXIT_DOMAIN };
    let manifest = art.finish(m)?;
    Ok(Outcome { code, manifest: Some(manifest), summary })
}
