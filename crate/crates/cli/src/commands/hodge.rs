use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nlharm::hodge::HodgeSolver;
use nlharm::io::write_cochain;
use nlharm::Cochain;

use super::finish;
use crate::args::{BettiArgs, HodgeArgs, SolverArgs};
use crate::artifacts::{Artifacts, Manifest};
use crate::config::{hodge_options, RunConfig};
use crate::{row, CliError, Outcome};

/// Tolerance on decomposition orthogonality and reconstruction.
const DECOMPOSITION_TOL: f64 = 1e-9;

fn config(command: &str, common: &crate::args::CommonArgs, cg_tol: Option<f64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_args(command, common, &SolverArgs::default())?;
    cfg.solver.hodge = hodge_options(cg_tol)?;
    Ok(cfg)
}

pub fn run_hodge(a: &HodgeArgs) -> Result<Outcome, CliError> {
    let cfg = config("hodge", &a.common, a.cg_tol)?;
    let grid = cfg.build_grid()?;
    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("hodge", &cfg);
    let solver = HodgeSolver::<f64>::new(&grid, cfg.solver.hodge.clone())?;
    let f = cfg.class_cochain(&grid)?;
    let rep = solver.harmonic_representative(&f)?;
    write_cochain(&art.path("harmonic.csv"), &rep.harmonic)?;

    let degree = a.degree.unwrap_or(f.degree());
    if degree > grid.dim() {
        return Err(CliError::Usage(format!("--degree must not exceed {}", grid.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let (mut worst_rec, mut worst_orth) = (0.0f64, 0.0f64);
    for s in 0..a.samples {
        let vals = (0..grid.num_cells(degree)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = Cochain::from_values(&grid, degree, vals)?;
        let d = solver.decompose(&c)?;
        worst_rec = worst_rec.max(d.reconstruction_residual);
        worst_orth = worst_orth.max(d.orthogonality);
        rows.push(row![s, d.reconstruction_residual, d.orthogonality, d.harmonic.norm() / c.norm()]);
    }
    if a.samples > 0 {
        art.table("decompositions.csv", &["sample", "reconstruction", "orthogonality", "harmonic_fraction"], &rows)?;
        let pass = worst_rec < DECOMPOSITION_TOL && worst_orth < DECOMPOSITION_TOL;
        m.status = if pass { "PASS" } else { "FAIL" }.into();
    }
    m.results = json!({
        "harmonic_energy": rep.harmonic.norm_sq(),
        "closed_residual": rep.closed_residual,
        "coclosed_residual": rep.coclosed_residual,
        "cg_iterations": rep.stats.iterations,
        "cg_relative_residual": rep.stats.relative_residual,
        "samples": a.samples,
        "sample_degree": degree,
        "worst_reconstruction": worst_rec,
        "worst_orthogonality": worst_orth,
        "tolerance": DECOMPOSITION_TOL,
    });
    finish(art, m)
}

pub fn run_betti(a: &BettiArgs) -> Result<Outcome, CliError> {
    let cfg = config("betti", &a.common, a.cg_tol)?;
    let grid = cfg.build_grid()?;
    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("betti", &cfg);
    let solver = HodgeSolver::<f64>::new(&grid, cfg.solver.hodge.clone())?;
    let mut numbers = Vec::new();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for k in 0..=grid.dim() {
        let r = solver.betti(k)?;
        numbers.push(r.betti);
        let gap = r.relative_spectrum.get(r.betti).copied().unwrap_or(0.0);
        rows.push(row![k, r.betti, r.probes, gap]);
        reports.push(r);
    }
    art.table("betti.csv", &["degree", "betti", "probes", "largest_noise_eigenvalue"], &rows)?;
    let expected: Vec<usize> = (0..=grid.dim()).map(|k| binomial(grid.dim(), k)).collect();
    m.status = if numbers == expected { "PASS" } else { "FAIL" }.into();
    m.results = json!({ "betti": numbers, "expected_torus": expected, "reports": reports });
    let mut out = finish(art, m)?;
    out.summary = format!("betti: {:?}\n", numbers);
    Ok(out)
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
