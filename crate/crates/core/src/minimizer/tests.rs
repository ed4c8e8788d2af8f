use super::*;
use crate::exterior::{mask_of, MultiVector};
use crate::grid::{GridSpec, MetricSpec};
use crate::hodge::HodgeSolver;

fn coordinate(g: &Arc<TorusGrid>, axes: &[usize], c: f64) -> Cochain<f64> {
    let h = g.spacing();
    Cochain::coordinate_form(g, mask_of(axes), c, axes.iter().map(|&i| h[i]).product()).unwrap()
}

fn pfaffian(g: &Arc<TorusGrid>) -> QuadraticConstraintSet {
    QuadraticConstraintSet::pfaffian(g, EvalMode::Collocation).unwrap()
}

fn wavy(m: usize) -> Arc<TorusGrid> {
    TorusGrid::new(GridSpec::unit(4, m).with_metric(MetricSpec::single(vec![0.4, 0.2, -0.4, 0.3], vec![1, 1, 1, 1], 0.3)))
        .unwrap()
}

fn harmonic_of(f: &Cochain<f64>) -> Cochain<f64> {
    HodgeSolver::new(f.grid(), HodgeSolveOptions::default()).unwrap().harmonic_representative(f).unwrap().harmonic
}

#[test]
fn cubic_roots_match_factored_polynomials() {
    let mut r = cubic_roots(2.0, -2.0 * 6.0, 2.0 * 11.0, -2.0 * 6.0);
    r.sort_by(f64::total_cmp);
    for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - b).abs() < 1e-12, "{r:?}");
    }
    let r = cubic_roots(1.0, 0.0, 1.0, -2.0);
    assert_eq!(r.len(), 1);
    assert!((r[0] - 1.0).abs() < 1e-14);
    let r = cubic_roots(0.0, 0.0, 4.0, -2.0);
    assert_eq!(r, vec![0.5]);
    let mut r = cubic_roots(0.0, 1.0, 0.0, -4.0);
    r.sort_by(f64::total_cmp);
    assert!((r[0] + 2.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14);
}

#[test]
fn feasible_harmonic_input_converges_immediately() {
    let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
    let h = coordinate(&g, &[0, 1], 1.0);
    let r = solve(&[h.clone()], &pfaffian(&g), &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    assert_eq!(r.state.outer_iterations, 0);
    assert!(r.z[0].sub(&h).unwrap().max_abs() < 1e-10);
    assert!((r.energy() - g.volume()).abs() < 1e-10);
    assert!(r.constraint_residual() < 1e-10 && r.gradient() < 1e-10);
}

#[test]
fn symplectic_class_is_refused() {
    let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
    let h = coordinate(&g, &[0, 1], 1.0).add(&coordinate(&g, &[2, 3], 1.0)).unwrap();
    let e = solve(&[h], &pfaffian(&g), &SolveOptions::default()).unwrap_err();
    assert!(matches!(e, Error::Infeasible { .. }), "{e:?}");
}

#[test]
fn non_harmonic_input_is_rejected() {
    let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
    let alpha = Cochain::integrate(&g, 1, |x| MultiVector::from_mask(4, 1, (std::f64::consts::TAU * x[2]).sin())).unwrap();
    let f = coordinate(&g, &[0, 1], 1.0).add(&alpha.d().unwrap()).unwrap();
    assert!(solve(&[f], &pfaffian(&g), &SolveOptions::default()).is_err());
}

#[test]
fn warm_start_returns_to_the_flat_representative() {
    let g = TorusGrid::new(GridSpec::unit(4, 6)).unwrap();
    let h = coordinate(&g, &[0, 1], 1.0);
    let alpha = Cochain::integrate(&g, 1, |x| MultiVector::from_mask(4, 1, (std::f64::consts::TAU * x[2]).sin())).unwrap();
    let f = h.add(&alpha.d().unwrap()).unwrap();
    let r = solve_from(&[h.clone()], &pfaffian(&g), &SolveOptions::default(), Some(&[f.clone()])).unwrap();
    assert!(r.traces.energy[0] > g.volume() + 1.0, "warm start should begin away from h");
    assert_eq!(r.status, SolveStatus::Converged);
    assert!((r.energy() - g.volume()).abs() < 1e-6, "{}", r.energy());
    assert!(accepted_energy_monotone(&r.traces));
    assert!(r.z[0].sub(&h).unwrap().max_abs() < 1e-4);
}

#[test]
fn curved_metric_converges_above_harmonic_energy() {
    let g = wavy(4);
    let h = harmonic_of(&coordinate(&g, &[0, 1], 1.0));
    let set = pfaffian(&g);
    let initial = set.evaluate(&[h.clone()]).unwrap().max_norm;
    assert!(initial > 1e-3, "harmonic representative should violate the constraint: {initial}");
    let r = solve(&[h.clone()], &set, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged, "{:?}", r.traces);
    assert!(r.constraint_residual() < 1e-6);
    assert!(r.energy() >= r.harmonic_energy - 1e-9);
    // Feasible iterates approach the minimum from below; their energies may
    // rise by about |mu| times the constraint tolerance.
    assert!(accepted_energy_rise(&r.traces) < 10.0 * SolveOptions::default().constraint_tol);
    assert!(r.traces.class_drift.iter().all(|&d| d < 1e-8), "{:?}", r.traces.class_drift);
    assert!(r.traces.gauge_drift.iter().all(|&d| d < 1e-12), "{:?}", r.traces.gauge_drift);
    let gauge = HodgeSolver::new(&g, HodgeSolveOptions::default()).unwrap();
    let y = &r.y[0];
    let dstar = Cochain::from_values(&g, 0, codifferential_values(&g, 1, y.values()).unwrap()).unwrap();
    assert!(dstar.norm() < 1e-8 * y.norm().max(1.0));
    assert!(gauge.project_harmonic(y).unwrap().norm() < 1e-8 * y.norm().max(1.0));
}

fn split_options(outer: usize) -> SolveOptions {
    SolveOptions { outer_max: outer, gradient_tol: 1e-15, constraint_tol: 1e-15, inner_max: 5, ..SolveOptions::default() }
}

#[test]
fn split_runs_match_a_single_run() {
    let g = wavy(3);
    let h = harmonic_of(&coordinate(&g, &[0, 1], 1.0));
    let set = pfaffian(&g);
    let whole = solve(&[h.clone()], &set, &split_options(12)).unwrap();
    let first = solve(&[h.clone()], &set, &split_options(4)).unwrap();
    assert_eq!(first.status, SolveStatus::MaxIter);
    let dir = tempfile::tempdir().unwrap();
    first.save(dir.path()).unwrap();
    let loaded = SolveReport::load(dir.path(), &g).unwrap();
    assert_eq!(loaded.y[0].values(), first.y[0].values());
    assert_eq!(loaded.mu, first.mu);
    assert_eq!(loaded.state, first.state);
    let rest = resume(&loaded, &set, &split_options(8)).unwrap();
    assert_eq!(rest.state.outer_iterations, whole.state.outer_iterations);
    assert!((rest.energy() - whole.energy()).abs() <= 1e-13 * whole.energy());
    assert_eq!(rest.traces.energy, whole.traces.energy);
    assert_eq!(rest.y[0].values(), whole.y[0].values());
}

#[test]
fn resume_of_converged_report_is_unchanged_and_mismatch_errors() {
    let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
    let h = coordinate(&g, &[0, 1], 1.0);
    let set = pfaffian(&g);
    let r = solve(&[h], &set, &SolveOptions::default()).unwrap();
    let again = resume(&r, &set, &SolveOptions::default()).unwrap();
    assert_eq!(again.traces, r.traces);
    assert_eq!(again.z[0].values(), r.z[0].values());
    let other = TorusGrid::new(GridSpec::unit(4, 5)).unwrap();
    assert!(matches!(resume(&r, &pfaffian(&other), &SolveOptions::default()), Err(Error::GridMismatch(_))));
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path()).unwrap();
    assert!(SolveReport::load(dir.path(), &other).is_err());
}

#[test]
fn options_are_validated() {
    let bad = [
        SolveOptions { penalty_growth: 1.0, ..Default::default() },
        SolveOptions { constraint_tol: 0.0, ..Default::default() },
        SolveOptions { gradient_tol: -1.0, ..Default::default() },
        SolveOptions { penalty_init: f64::NAN, ..Default::default() },
    ];
    for o in bad {
        assert!(o.validate().is_err(), "{o:?}");
    }
    assert!(SolveOptions::default().validate().is_ok());
}

#[test]
fn monotonicity_only_counts_accepted_iterates() {
    let t =
        Traces { energy: vec![2.0, 3.0, 1.9, 2.5, 1.8], accepted: vec![true, false, true, false, true], ..Default::default() };
    assert!(accepted_energy_monotone(&t));
    assert_eq!(accepted_energy_rise(&t), 0.0);
    let t = Traces { energy: vec![1.0, 1.1], accepted: vec![true, true], ..Default::default() };
    assert!(!accepted_energy_monotone(&t));
    assert!((accepted_energy_rise(&t) - 0.1).abs() < 1e-12);
}
