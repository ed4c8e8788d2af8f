use std::path::Path;
use std::sync::Arc;

use nlharm::hodge::HodgeSolver;
use nlharm::io::read_cochain;
use nlharm::minimizer::{solve, SolveReport, SolveStatus};
use nlharm::{Cochain, TorusGrid};

use crate::args::Command;
use crate::artifacts::{Artifacts, Manifest};
use crate::config::RunConfig;
use crate::{CliError, Outcome, EXIT_DOMAIN, EXIT_OK};

mod bochner;
mod hodge;
mod monotone;
mod solve;
mod variation;

pub fn execute(cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Solve(a) => solve::run(a),
        Command::Hodge(a) => hodge::run_hodge(a),
        Command::Betti(a) => hodge::run_betti(a),
        Command::ElCheck(a) => solve::run_el_check(a),
        Command::VariationCheck(a) => variation::run(a),
        Command::BochnerCheck(a) => bochner::run(a),
        Command::Monotonicity(a) => monotone::run(a),
        Command::Selftest(a) => crate::selftest::run(a),
        Command::Report(a) => crate::bundle::run(a),
    }
}

pub(crate) fn solve_status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "CONVERGED",
        SolveStatus::Infeasible => "INFEASIBLE",
        SolveStatus::MaxIter => "MAX_ITER",
    }
}

pub(crate) fn harmonic_of_class(cfg: &RunConfig, grid: &Arc<TorusGrid>) -> Result<Cochain<f64>, CliError> {
    let f = cfg.class_cochain(grid)?;
    let hodge = HodgeSolver::new(grid, cfg.solver.hodge.clone())?;
    Ok(hodge.harmonic_representative(&f)?.harmonic)
}

/// The minimizer for the configured class: loaded from an earlier `solve`
/// output directory, or computed now.
pub(crate) fn obtain_solution(cfg: &RunConfig, from: Option<&Path>) -> Result<SolveReport, CliError> {
    if let Some(dir) = from {
        let sol = dir.join("solution");
        let h0 =
            read_cochain(&sol.join("h_0.csv")).map_err(|e| CliError::Usage(format!("cannot load {}: {e}", sol.display())))?;
        let report = SolveReport::load(&sol, h0.grid())?;
        return Ok(report);
    }
    let grid = cfg.build_grid()?;
    let h = harmonic_of_class(cfg, &grid)?;
    let set = cfg.constraint_set(&grid)?.ok_or_else(|| CliError::Usage("this command needs a constraint".into()))?;
    let report = solve(&[h], &set, &cfg.solver)?;
    if report.status != SolveStatus::Converged {
        return Err(CliError::Domain(format!("solver stopped with status {}", solve_status_name(report.status))));
    }
    Ok(report)
}

pub(crate) fn finish(art: Artifacts, manifest: Manifest) -> Result<Outcome, CliError> {
    let code = match manifest.status.as_str() {
        "OK" | "CONVERGED" | "PASS" => EXIT_OK,
        _ => EXIT_DOMAIN,
    };
    let summary = format!("{}: {}\n", manifest.command, manifest.status);
    let manifest = art.finish(manifest)?;
    Ok(Outcome { code, manifest: Some(manifest), summary })
}
