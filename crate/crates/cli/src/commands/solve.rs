use serde_json::json;

use nlharm::framecalc::heuristic_structure_diagnostics;
use nlharm::framecalc::{FormField2, FrameCalc, FrameOptions, HeuristicOptions, MetricField};
use nlharm::grid::to_pointwise;
use nlharm::minimizer::{accepted_energy_monotone, accepted_energy_rise, solve, SolveReport};
use nlharm::optimality::{
    de_on_tangent, multiplier_agreement, pointwise_multiplier_residual, recover_multiplier, smooth_multiplier_residual,
    tangent_space_sample, MultiplierOptions, TangentOptions,
};
use nlharm::Error;

use super::{finish, harmonic_of_class, obtain_solution, solve_status_name};
use crate::args::{ElCheckArgs, SolveArgs};
use crate::artifacts::{Artifacts, Manifest};
use crate::config::RunConfig;
use crate::{row, CliError, Outcome};

pub fn run(a: &SolveArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_args("solve", &a.common, &a.solver)?;
    let grid = cfg.build_grid()?;
    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("solve", &cfg);
    let h = harmonic_of_class(&cfg, &grid)?;
    let Some(set) = cfg.constraint_set(&grid)? else {
        m.results = json!({ "energy": h.norm_sq(), "harmonic_energy": h.norm_sq() });
        nlharm::io::write_cochain(&art.path("harmonic.csv"), &h)?;
        return finish(art, m);
    };
    let report = match solve(std::slice::from_ref(&h), &set, &cfg.solver) {
        Ok(r) => r,
        Err(Error::Infeasible { total, threshold }) => {
            m.status = "INFEASIBLE".into();
            m.message = Some("class refused by the cup-square screen".into());
            m.results = json!({ "cup_square_total": total, "threshold": threshold, "harmonic_energy": h.norm_sq() });
            return finish(art, m);
        }
        Err(e) => return Err(e.into()),
    };
    m.status = solve_status_name(report.status).into();
    write_traces(&mut art, &report)?;
    report.save(&art.dir().join("solution"))?;
    for f in std::fs::read_dir(art.dir().join("solution"))? {
        let name = f?.file_name().to_string_lossy().into_owned();
        art.path(&format!("solution/{name}"));
    }
    let z = &report.z[0];
    let mut results = json!({
        "energy": report.energy(),
        "harmonic_energy": report.harmonic_energy,
        "energy_gap": report.energy() - report.harmonic_energy,
        "constraint_max_norm": report.constraint_residual(),
        "relative_gradient": report.gradient(),
        "class_drift": report.traces.class_drift.last().copied(),
        "outer_iterations": report.state.outer_iterations,
        "accepted_energy_monotone": accepted_energy_monotone(&report.traces),
        "accepted_energy_rise": accepted_energy_rise(&report.traces),
        "max_change_from_harmonic": z.sub(&h)?.max_abs() / h.max_abs().max(f64::MIN_POSITIVE),
        "feasibility": report.feasibility,
    });
    if grid.dim() == 4 && z.degree() == 2 {
        let fit = recover_multiplier(z, &MultiplierOptions::default())?;
        let neg: Vec<f64> = report.mu[0].iter().map(|x| -x).collect();
        results["multiplier"] = json!({
            "weak_residual": fit.relative_residual,
            "pointwise_residual": pointwise_multiplier_residual(z, &fit.mu)?,
            "agreement_with_solver": multiplier_agreement(&grid, &fit.mu, &neg),
            "null_points": fit.null_points,
        });
        m.residuals.insert("el".into(), fit.relative_residual);
    }
    m.results = results;
    finish(art, m)
}

fn write_traces(art: &mut Artifacts, r: &SolveReport) -> Result<(), CliError> {
    let t = &r.traces;
    let rows: Vec<_> = (0..t.energy.len())
        .map(|i| {
            row![
                i,
                t.energy[i],
                t.constraint[i],
                t.gradient[i],
                t.class_drift[i],
                t.gauge_drift[i],
                t.penalty[i],
                t.inner_iterations[i],
                t.accepted[i]
            ]
        })
        .collect();
    art.table(
        "traces.csv",
        &[
            "iteration",
            "energy",
            "constraint",
            "gradient",
            "class_drift",
            "gauge_drift",
            "penalty",
            "inner_iterations",
            "accepted",
        ],
        &rows,
    )
}

pub fn run_el_check(a: &ElCheckArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_args("el-check", &a.common, &a.solver)?;
    if a.directions == 0 {
        return Err(CliError::Usage("--directions must be positive".into()));
    }
    let report = obtain_solution(&cfg, a.source.from.as_deref())?;
    let grid = report.grid().clone();
    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("el-check", &cfg);
    let z = &report.z[0];
    if grid.dim() != 4 || z.degree() != 2 {
        return Err(CliError::Usage("el-check needs a 2-form on T^4".into()));
    }
    let set = nlharm::constraint::QuadraticConstraintSet::pfaffian(&grid, cfg.eval)?;

    let fit = recover_multiplier(z, &MultiplierOptions::default())?;
    let neg: Vec<f64> = report.mu[0].iter().map(|x| -x).collect();
    let pointwise = pointwise_multiplier_residual(z, &fit.mu)?;
    let smooth = smooth_multiplier_residual(z, &fit.mu, &[0, 1, 2, 3])?;
    let agreement = multiplier_agreement(&grid, &fit.mu, &neg);
    nlharm::io::write_cochain(&art.path("mu_recovered.csv"), &nlharm::Cochain::from_values(&grid, 4, fit.mu.clone())?)?;

    let tangent = tangent_space_sample(z, &set, a.directions, &TangentOptions { seed: cfg.seed, ..TangentOptions::default() })?;
    let tol = report.options.gradient_tol;
    let mut rows = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for (i, v) in tangent.directions.iter().enumerate() {
        let de = de_on_tangent(z, v)?;
        let ratio = de.abs() / v.norm().max(f64::MIN_POSITIVE);
        worst_ratio = worst_ratio.max(ratio);
        rows.push(row![i, de, v.norm(), ratio, ratio <= tol]);
    }
    art.table("tangent.csv", &["direction", "de", "norm", "ratio", "within_tolerance"], &rows)?;
    let tangent_pass = worst_ratio <= tol;

    let mut frame = serde_json::Value::Null;
    if a.stride > 0 {
        let f = to_pointwise(z);
        let hopts = HeuristicOptions { stride: a.stride, ..HeuristicOptions::default() };
        let diag = heuristic_structure_diagnostics(&f, &fit.mu, &hopts)?;
        m.residuals.insert("mu1".into(), diag.multiplier_torsion.max);
        m.residuals.insert("mu2".into(), diag.multiplier_torsion.max);
        m.residuals.insert("mu5".into(), diag.integrability.max);
        let eqs = sampled_frame_equations(&f, a.stride, &hopts)?;
        for (key, idx) in [("mu3", 0), ("mu4", 1), ("mu6", 4), ("mu7", 5)] {
            m.residuals.insert(key.into(), eqs.0[idx]);
        }
        frame = json!({ "diagnostics": diag, "frame_equation_max": eqs.0, "frame_points": eqs.1, "frame_masked": eqs.2 });
    }
    m.residuals.insert("el".into(), fit.relative_residual);
    let pass = fit.relative_residual < 1e-3 && tangent_pass;
    m.status = if pass { "PASS" } else { "FAIL" }.into();
    m.results = json!({
        "source": if a.source.from.is_some() { "loaded" } else { "solved" },
        "grid": grid.spec(),
        "energy": report.energy(),
        "weak_residual": fit.relative_residual,
        "pointwise_residual": pointwise,
        "smooth_test_residual": smooth,
        "multiplier_agreement": agreement,
        "multiplier_iterations": fit.iterations,
        "null_points": fit.null_points,
        "tangent_kernel_residual": tangent.kernel_residual,
        "tangent_worst_ratio": worst_ratio,
        "gradient_tol": tol,
        "tangent_pass": tangent_pass,
        "frame": frame,
    });
    finish(art, m)
}

/// Largest magnitude of each frame equation over the sampled cell centers,
/// with the counts of evaluated and masked points.
fn sampled_frame_equations(
    z: &nlharm::FormField<f64>,
    stride: usize,
    opts: &HeuristicOptions,
) -> Result<([f64; 8], usize, usize), CliError> {
    let grid = z.grid().clone();
    let metric = MetricField::from_grid(&grid)?;
    let form = FormField2::from_field(z)?;
    let calc = FrameCalc::new(&metric, &form, FrameOptions { ..opts.frame.clone() })?;
    let amax = z.values().iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let mut worst = [0.0f64; 8];
    let (mut used, mut masked) = (0, 0);
    for v in 0..grid.n_vertices() {
        let c = grid.vertex_coords(v);
        if (0..4).any(|k| c[k] % stride != 0) {
            continue;
        }
        if z.get(v).norm() <= opts.threshold * amax {
            masked += 1;
            continue;
        }
        let xc = grid.top_center(v);
        match calc.harmonic_frame_residuals(&[xc[0], xc[1], xc[2], xc[3]]) {
            Ok(r) => {
                used += 1;
                for (w, x) in worst.iter_mut().zip(r) {
                    *w = w.max(x.abs());
                }
            }
            Err(Error::Masked(_)) => masked += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((worst, used, masked))
}
