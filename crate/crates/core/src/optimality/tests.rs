use super::*;
use crate::constraint::EvalMode;
use crate::geometry::riemann_frame;
use crate::grid::{GridSpec, MetricSpec};
use crate::hodge::{HodgeSolveOptions, HodgeSolver};
use crate::minimizer::{solve, SolveOptions};
use std::f64::consts::TAU;

fn flat(dim: usize, m: usize) -> Arc<TorusGrid> {
    TorusGrid::new(GridSpec::unit(dim, m)).unwrap()
}

fn wavy(dim: usize, m: usize) -> Arc<TorusGrid> {
    let amps = [0.4, 0.2, -0.4, 0.3][..dim].to_vec();
    TorusGrid::new(GridSpec::unit(dim, m).with_metric(MetricSpec::single(amps, vec![1; dim], 0.3))).unwrap()
}

fn smooth_form(g: &Arc<TorusGrid>, k: usize) -> FormField<f64> {
    let n = g.dim();
    FormField::from_fn(g, |x| {
        let mut z = MultiVector::zero(n);
        for (i, s) in crate::exterior::subsets(n, k).into_iter().enumerate() {
            let a = 0.3 * (i as f64 + 1.0);
            z.set(s, 1.0 + a * (TAU * (x[0] + 2.0 * x[n - 1]) + a).sin());
        }
        z
    })
}

fn potential(x: &[f64]) -> f64 {
    (TAU * x[0]).sin() * (TAU * x[1]).cos() + 0.5 * (TAU * (x[0] - x[1])).cos()
}

#[test]
fn translation_on_flat_torus_is_killing() {
    let g = flat(4, 4);
    let x = VectorFieldSpec::translation(&g, &[0.3, -1.0, 0.5, 2.0]).unwrap();
    for v in 0..g.n_vertices() {
        assert!(x.symmetric(v).iter().flatten().all(|c| *c == 0.0));
        assert!(x.skew(v).iter().flatten().all(|c| *c == 0.0));
    }
    let z = smooth_form(&g, 2);
    let r = variation_report(&z, &x, None).unwrap();
    assert!(r.first_variation.abs() < 1e-12 && r.second_variation_v1.abs() < 1e-11, "{r:?}");
    let dvol = FormField::from_fn(&g, |_| MultiVector::from_mask(4, 0b1111, 1.0));
    assert!(killing_identity(&dvol, &x, None).unwrap().abs() < 1e-10);
}

#[test]
fn parts_of_the_gradient_sum_to_it() {
    let g = wavy(3, 6);
    let x = VectorFieldSpec::gradient_of(&g, potential).unwrap();
    assert_eq!(x.kind(), VectorFieldKind::GradientOfScalar);
    for v in 0..g.n_vertices() {
        let (a, b, full) = (x.skew(v), x.symmetric(v), x.gradient_matrix(v));
        for j in 0..4 {
            for m in 0..4 {
                assert!((a[j][m] + b[j][m] - full[j][m]).abs() < 1e-14);
                assert_eq!(a[j][m], -a[m][j]);
            }
        }
    }
    let f = flat(3, 6);
    let x = VectorFieldSpec::gradient_of(&f, potential).unwrap();
    for v in 0..f.n_vertices() {
        assert!(x.skew(v).iter().flatten().all(|c| c.abs() < 1e-12));
    }
}

#[test]
fn breakdown_sums_to_totals() {
    let g = wavy(4, 4);
    let x = VectorFieldSpec::gradient_of(&g, potential).unwrap();
    let z = smooth_form(&g, 2);
    let curv = |p: &[f64]| riemann_frame(g.as_ref(), p);
    let r = variation_report(&z, &x, Some(&curv)).unwrap();
    let t = &r.breakdown;
    assert!((t.transport + t.quadratic - r.second_variation_v1).abs() <= 1e-12 * r.second_variation_v1.abs().max(1.0));
    let v2 = t.a_squared + t.b_squared + t.curvature + t.quadratic;
    assert!((v2 - r.second_variation_v2).abs() <= 1e-12 * v2.abs().max(1.0));
    assert!(t.curvature != 0.0);
    assert!(variation_report(&z, &x, None).is_err());
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<VariationReport>(&json).unwrap(), r);
}

#[test]
fn constant_function_variation_is_a_divergence() {
    let one = |g: &Arc<TorusGrid>| FormField::from_fn(g, |_| MultiVector::scalar(g.dim(), 1.5));
    let g = flat(2, 8);
    let x = VectorFieldSpec::gradient_of(&g, potential).unwrap();
    assert!(first_variation(&one(&g), &x).unwrap().clifford.abs() < 1e-12);
    let errs: Vec<f64> = [16, 32]
        .iter()
        .map(|&m| {
            let g = wavy(2, m);
            let x = VectorFieldSpec::gradient_of(&g, potential).unwrap();
            first_variation(&one(&g), &x).unwrap().clifford.abs()
        })
        .collect();
    assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
}

#[test]
fn clifford_and_price_forms_agree_to_second_order() {
    let gap = |m: usize| {
        let g = wavy(2, m);
        let x = VectorFieldSpec::gradient_of(&g, potential).unwrap();
        let r = first_variation(&smooth_form(&g, 1), &x).unwrap();
        (r.clifford - 4.0 * r.price).abs()
    };
    let (a, b) = (gap(16), gap(32));
    assert!(a / b > 3.5 && a / b < 4.5, "{a:e} {b:e}");
}

#[test]
fn grid_mismatch_is_reported() {
    let z = smooth_form(&flat(2, 4), 1);
    let x = VectorFieldSpec::translation(&flat(2, 5), &[1.0, 0.0]).unwrap();
    assert!(matches!(first_variation(&z, &x), Err(Error::GridMismatch(_))));
}

fn coordinate(g: &Arc<TorusGrid>, axes: &[usize]) -> Cochain<f64> {
    let h = g.spacing();
    Cochain::coordinate_form(g, mask_of(axes), 1.0, axes.iter().map(|&i| h[i]).product()).unwrap()
}

#[test]
fn harmonic_forms_need_no_multiplier() {
    let g = flat(4, 4);
    let fit = recover_multiplier(&coordinate(&g, &[0, 1]), &MultiplierOptions::default()).unwrap();
    assert!(fit.mu.iter().all(|m| *m == 0.0));
    assert_eq!(fit.relative_residual, 0.0);
    let zero = Cochain::zeros(&g, 2).unwrap();
    let fit = recover_multiplier(&zero, &MultiplierOptions::default()).unwrap();
    assert_eq!(fit.null_points, g.n_vertices());
    assert!(recover_multiplier(&Cochain::zeros(&g, 1).unwrap(), &MultiplierOptions::default()).is_err());
}

#[test]
fn closed_directions_and_harmonic_forms_are_stationary() {
    let g = wavy(4, 4);
    let hodge = HodgeSolver::new(&g, HodgeSolveOptions::default()).unwrap();
    let h = hodge.harmonic_representative(&coordinate(&g, &[0, 1])).unwrap().harmonic;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let u = Cochain::from_values(&g, 0, (0..g.num_cells(0)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let v = u.d().unwrap();
        assert!(de_on_tangent(&h, &v).unwrap().abs() < 1e-9);
        let w = Cochain::from_values(&g, 1, (0..g.num_cells(1)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert!(de_on_tangent(&h, &w).unwrap().abs() < 1e-9 * w.norm());
    }
}

#[test]
fn minimizer_satisfies_the_multiplier_equation() {
    let g = wavy(4, 4);
    let hodge = HodgeSolver::new(&g, HodgeSolveOptions::default()).unwrap();
    let h = hodge.harmonic_representative(&coordinate(&g, &[0, 1])).unwrap().harmonic;
    let set = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
    let opts = SolveOptions::default();
    let r = solve(&[h], &set, &opts).unwrap();
    let z = &r.z[0];
    let fit = recover_multiplier(z, &MultiplierOptions::default()).unwrap();
    assert!(fit.relative_residual < 1e-3, "{}", fit.relative_residual);
    let al: Vec<f64> = r.mu[0].iter().map(|m| -m).collect();
    let agreement = multiplier_agreement(&g, &fit.mu, &al);
    assert!(agreement < 0.1, "{agreement}");
    let sample = tangent_space_sample(z, &set, 5, &TangentOptions::default()).unwrap();
    assert!(sample.kernel_residual < 1e-8, "{}", sample.kernel_residual);
    for v in &sample.directions {
        let de = de_on_tangent(z, v).unwrap();
        assert!(de.abs() <= opts.gradient_tol * v.norm(), "{de:e} {:e}", v.norm());
    }
}

#[test]
fn smooth_test_residual_of_constant_forms_vanishes() {
    let g = flat(4, 4);
    let z = coordinate(&g, &[0, 1]).add(&coordinate(&g, &[2, 3])).unwrap();
    let mu = vec![0.7; g.n_vertices()];
    assert!(smooth_multiplier_residual(&z, &mu, &[0, 1, 2, 3]).unwrap() < 1e-14);
    assert!(smooth_multiplier_residual(&z, &mu, &[]).is_err());
    assert!(smooth_multiplier_residual(&z, &mu[1..], &[0]).is_err());
}

#[test]
fn smooth_test_residual_of_harmonic_forms_is_second_order() {
    let residual = |m: usize| {
        let g = TorusGrid::new(GridSpec::unit(4, m).with_metric(MetricSpec::single(
            vec![0.4, 0.2, -0.4, 0.3],
            vec![1, 0, 1, 0],
            0.3,
        )))
        .unwrap();
        let hodge = HodgeSolver::new(&g, HodgeSolveOptions::default()).unwrap();
        let h = hodge.harmonic_representative(&coordinate(&g, &[0, 1])).unwrap().harmonic;
        smooth_multiplier_residual(&h, &vec![0.0; g.n_vertices()], &[0, 2]).unwrap()
    };
    let (r1, r2) = (residual(6), residual(12));
    assert!((3.0..=5.0).contains(&(r1 / r2)), "{r1:e} {r2:e}");
}

#[test]
fn frame_equation_vanishes_for_parallel_forms_and_masks_self_dual_points() {
    let g = flat(4, 4);
    let z = FormField::from_fn(&g, |_| MultiVector::from_mask(4, 0b0011, 2.0).add(&MultiVector::from_mask(4, 0b1100, 0.5)));
    let r = frame_equation_residual(&z).unwrap();
    assert_eq!(r.masked, 0);
    assert_eq!(r.max_norm, 0.0);
    let sd = FormField::from_fn(&g, |_| MultiVector::from_mask(4, 0b0011, 1.0).add(&MultiVector::from_mask(4, 0b1100, 1.0)));
    let r = frame_equation_residual(&sd).unwrap();
    assert_eq!(r.masked, g.n_vertices());
}

#[test]
fn frame_equation_matches_one_variable_oracle() {
    // z = a(x3) e^{12}: only the e_3 equation is nonzero, with value -a a'.
    let a = |t: f64| 1.5 + 0.5 * (TAU * t).sin();
    let da = |t: f64| 0.5 * TAU * (TAU * t).cos();
    let err = |m: usize| {
        let g = flat(4, m);
        let z = FormField::from_fn(&g, |x| MultiVector::from_mask(4, 0b0011, a(x[2])));
        let r = frame_equation_residual(&z).unwrap();
        let mut worst: f64 = 0.0;
        for (v, p) in r.points.iter().enumerate() {
            let p = p.as_ref().unwrap();
            let t = g.top_center(v)[2];
            let axis3 = [0.0, 0.0, 1.0, 0.0];
            let mut along = 0.0;
            for j in 0..4 {
                let c: f64 = (0..4).map(|i| p.frame[j][i] * axis3[i]).sum();
                along += c * p.residual[j];
            }
            worst = worst.max((along + a(t) * da(t)).abs());
            let rest: f64 = p.residual.iter().map(|x| x * x).sum::<f64>() - along * along;
            assert!(rest.abs() < 1e-9);
        }
        worst
    };
    let (e8, e16) = (err(8), err(16));
    assert!(e8 / e16 > 3.5 && e8 / e16 < 4.5, "{e8:e} {e16:e}");
}
