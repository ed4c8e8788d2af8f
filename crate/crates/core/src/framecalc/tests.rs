use super::*;
use crate::grid::Cochain;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::{PI, TAU};

const AMP: f64 = 0.1;

fn opts(eps: f64) -> FrameOptions {
    FrameOptions { eps, ..FrameOptions::default() }
}

fn phi(x1: f64) -> (f64, f64, f64) {
    // phi, phi', phi'' for phi = AMP cos(2 pi x1)
    (AMP * (TAU * x1).cos(), -AMP * TAU * (TAU * x1).sin(), -AMP * TAU * TAU * (TAU * x1).cos())
}

/// `2 dx^12 + dx^34`: constant chart components, harmonic for every conformal metric.
fn conformal_harmonic() -> FormField2 {
    FormField2::new("harmonic", |_| [2.0, 0.0, 0.0, 0.0, 0.0, 1.0])
}

#[test]
fn flat_block_form() {
    let h = [[0.0, 2.0, 0.0, 0.0], [-2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -1.0, 0.0]];
    let form = FormField2::constant(h).unwrap();
    let p = adapt_frame(&MetricField::flat(), &form, &[0.3, 0.1, 0.7, 0.2]).unwrap();
    assert!((p.a() - 2.0).abs() < 1e-14 && (p.b() - 1.0).abs() < 1e-14);
    assert!((p.f - 3f64.sqrt().ln()).abs() < 1e-14);
    assert!((p.f - 0.5493).abs() < 1e-4);
    assert!(p.gamma.iter().flatten().flatten().all(|g| g.abs() < 1e-12));
    let t = &p.tensors;
    assert_eq!(t.torsion_a_sq() + t.torsion_b_sq() + t.second_a_sq() + t.second_b_sq(), 0.0);
}

#[test]
fn asymmetric_matrix_rejected() {
    let mut h = [[0.0; 4]; 4];
    h[0][1] = 1.0;
    assert!(FormField2::constant(h).is_err());
}

#[test]
fn self_dual_point_is_masked() {
    let form = FormField2::new("sd", |_| [1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let err = adapt_frame(&MetricField::flat(), &form, &[0.1; 4]).unwrap_err();
    assert!(matches!(err, Error::Masked(_)));
}

#[test]
fn orientation_sign_lands_on_b() {
    let form = FormField2::new("asd", |_| [2.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    let p = adapt_frame(&MetricField::flat(), &form, &[0.1; 4]).unwrap();
    assert!((p.a() - 2.0).abs() < 1e-14 && (p.b() + 1.0).abs() < 1e-14);
    let m = Matrix4::from_fn(|i, j| p.frame.frame[i][j]);
    assert!((m.determinant() - 1.0).abs() < 1e-12);
}

fn spheres() -> (MetricField, FormField2) {
    (MetricField::product_spheres(1.0, 1.0).unwrap(), FormField2::product_areas(1.0, 1.0, 2.0, 1.0))
}

#[test]
fn product_spheres_structure() {
    let (g, h) = spheres();
    let calc = FrameCalc::new(&g, &h, opts(1e-3)).unwrap();
    for x in g.sample_points(6, 3) {
        let p = calc.packet(&x).unwrap();
        assert!((p.a() - 2.0).abs() < 1e-12 && (p.b() - 1.0).abs() < 1e-12);
        let e = &p.frame.frame;
        for i in 0..2 {
            for k in 2..4 {
                assert!(e[i][k].abs() < 1e-12 && e[k][i].abs() < 1e-12, "frame not tangent to factors");
            }
        }
        let t = &p.tensors;
        let total = t.torsion_a_sq() + t.torsion_b_sq() + t.second_a_sq() + t.second_b_sq();
        assert!(total < 1e-16, "{total:e}");
        assert!(frame_equations(&p).iter().all(|r| r.abs() < 1e-9));

        let k = calc.sectional_curvatures(&x).unwrap();
        for (i, j, want) in [(0, 1, 1.0), (2, 3, 1.0), (0, 2, 0.0), (0, 3, 0.0), (1, 2, 0.0), (1, 3, 0.0)] {
            assert!((k.direct[i][j] - want).abs() < 1e-12, "direct K{i}{j} = {}", k.direct[i][j]);
            assert!((k.from_connection[i][j] - want).abs() < 1e-5, "gauss K{i}{j} = {}", k.from_connection[i][j]);
        }

        for variant in [BochnerVariant::Critical, BochnerVariant::Curvature] {
            let r = calc.bochner_residual(&x, variant).unwrap();
            assert!(r.lhs.abs() < 1e-9 && r.residual.abs() < 1e-9, "{variant:?}: {r:?}");
            if variant == BochnerVariant::Critical {
                for t in &r.terms {
                    assert!(t.value.abs() < 1e-9, "{} = {}", t.name, t.value);
                }
            }
        }
    }
}

#[test]
fn sphere_connection_matches_christoffel() {
    let (g, h) = spheres();
    let calc = FrameCalc::new(&g, &h, FrameOptions::default()).unwrap();
    for theta in [PI / 2.0, 1.0] {
        let p = calc.packet(&[theta, 0.4, 1.2, 2.0]).unwrap();
        let cot = theta.cos() / theta.sin();
        // nabla_{e2} e2 = -cot(theta) e1 on the first factor.
        assert!((p.gamma[1][1][0] + cot).abs() < 1e-6);
        assert!((p.gamma[1][0][1] - cot).abs() < 1e-6);
        assert!(p.gamma[0][1][0].abs() < 1e-6 && p.gamma[0][0][1].abs() < 1e-6);
    }
}

#[test]
fn conformal_connection_is_metric() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = FormField2::new("generic", |x| [2.0, 0.3 * (TAU * x[1]).sin(), 0.2, 0.1, -0.4, 0.7 + 0.2 * x[2]]);
    let calc = FrameCalc::new(&g, &h, FrameOptions::default()).unwrap();
    let (mut worst, mut fd) = (0.0f64, 0.0f64);
    for x in g.sample_points(100, 11) {
        let p = calc.packet(&x).unwrap();
        worst = worst.max(p.antisymmetry_defect());
        fd = fd.max(p.fd_defect);
    }
    assert!(worst < 1e-8, "{worst:e}");
    assert!(fd < 1e-6, "{fd:e}");
}

#[test]
fn conformal_mean_curvature() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = FormField2::orthonormal_constant(&g, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let calc = FrameCalc::new(&g, &h, FrameOptions::default()).unwrap();
    for x in g.sample_points(10, 5) {
        let p = calc.packet(&x).unwrap();
        let (ph, dph, _) = phi(x[0]);
        let want = -2.0 * (-ph).exp() * dph;
        let t = &p.tensors;
        assert!((t.mean_b[0] - want).abs() < 1e-5 && t.mean_b[1].abs() < 1e-5);
        assert!(t.mean_a[0].abs() < 1e-5 && t.mean_a[1].abs() < 1e-5);
    }
}

#[test]
fn gauss_equation_converges_at_second_order() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = conformal_harmonic();
    let x = [0.13, 0.4, 0.7, 0.2];
    let dev = |eps: f64| FrameCalc::new(&g, &h, opts(eps)).unwrap().sectional_curvatures(&x).unwrap().deviation;
    let (d1, d2) = (dev(0.01), dev(0.005));
    let ratio = d1 / d2;
    assert!((3.0..=5.0).contains(&ratio), "deviations {d1:e} {d2:e} ratio {ratio}");

    let k = FrameCalc::new(&g, &h, FrameOptions::default()).unwrap().sectional_curvatures(&x).unwrap().direct;
    let (ph, dph, ddph) = phi(x[0]);
    let s = (-2.0 * ph).exp();
    assert!((k[0][1] + s * ddph).abs() < 1e-10);
    assert!((k[2][3] + s * dph * dph).abs() < 1e-10);
}

#[test]
fn invariants_do_not_depend_on_gauge() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = FormField2::new("generic", |x| [2.0, 0.3 * (TAU * x[1]).sin(), 0.2, 0.1, -0.4, 0.7 + 0.2 * x[2]]);
    let calc = FrameCalc::new(&g, &h, FrameOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for x in g.sample_points(5, 9) {
        let base = calc.packet(&x).unwrap().invariants();
        for _ in 0..3 {
            let m = Matrix4::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            let q = m.qr().q();
            let gauge: Mat4 = std::array::from_fn(|i| std::array::from_fn(|j| q[(i, j)]));
            let other = calc.packet_in_gauge(&x, &gauge).unwrap().invariants();
            assert!(base.max_difference(&other) < 1e-8, "{base:?} vs {other:?}");
        }
    }
}

#[test]
fn critical_bochner_on_conformal_harmonic() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = conformal_harmonic();
    let calc = FrameCalc::new(&g, &h, opts(1e-3)).unwrap();
    let cp = calc.find_critical_point(&[0.04, 0.3, 0.4, 0.6]).unwrap();
    assert!(cp.grad_norm < 1e-6, "{cp:?}");
    assert!(cp.point[0].abs() < 1e-6);
    let r = calc.bochner_residual(&cp.point, BochnerVariant::Critical).unwrap();
    let (ph, _, ddph) = phi(cp.point[0]);
    let lhs = -2.0 * (-2.0 * ph).exp() * ddph;
    assert!((r.lhs - lhs).abs() < 1e-4 * lhs.abs(), "{} vs {lhs}", r.lhs);
    assert!(r.residual.abs() < 1e-4 * lhs.abs(), "{r:?}");
    let p = calc.point_adapted_packet(&cp.point).unwrap();
    for i in 0..4 {
        assert!(p.gamma[i][0][1].abs() < 1e-8 && p.gamma[i][2][3].abs() < 1e-8);
    }
    assert!(calc.bochner_residual(&[0.1, 0.3, 0.4, 0.6], BochnerVariant::Critical).is_err());
}

#[test]
fn curvature_bochner_converges_away_from_critical_points() {
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let h = conformal_harmonic();
    let x = [0.13, 0.4, 0.7, 0.2];
    let run = |eps: f64| FrameCalc::new(&g, &h, opts(eps)).unwrap().bochner_residual(&x, BochnerVariant::Curvature).unwrap();
    let (r1, r2) = (run(0.01), run(0.005));
    let ratio = r1.residual.abs() / r2.residual.abs();
    assert!((3.0..=5.0).contains(&ratio), "{} {} ratio {ratio}", r1.residual, r2.residual);
    let (ph, dph, ddph) = phi(x[0]);
    let lhs = -2.0 * (-2.0 * ph).exp() * (ddph + 2.0 * dph * dph);
    assert!((r2.lhs - lhs).abs() < 1e-3 * lhs.abs());
    assert!(r2.term("leaf_b").unwrap().abs() < 1e-4);
}

#[test]
fn frame_equations_flat_parallel() {
    let form = FormField2::new("parallel", |_| [2.0, 0.0, 0.5, 0.0, 0.0, 1.0]);
    let g = MetricField::flat();
    let calc = FrameCalc::new(&g, &form, FrameOptions::default()).unwrap();
    assert!(calc.harmonic_frame_residuals(&[0.2, 0.5, 0.1, 0.9]).unwrap().iter().all(|r| *r == 0.0));
}

#[test]
fn frame_equations_match_hand_values() {
    // (1 + x1) dx^12 + dx^34 / 2 on the conformal torus: only the a_1 equation fails, by e^{-3 phi}.
    let g = MetricField::conformal_torus(AMP, 0).unwrap();
    let form = FormField2::from_case(
        &FormCase::Affine { base: [1.0, 0.0, 0.0, 0.0, 0.0, 0.5], slope: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], axis: 0 },
        &g,
    )
    .unwrap();
    let calc = FrameCalc::new(&g, &form, FrameOptions::default()).unwrap();
    for x in g.sample_points(8, 2) {
        let r = calc.harmonic_frame_residuals(&x).unwrap();
        let want = (-3.0 * phi(x[0]).0).exp();
        for (n, v) in r.iter().enumerate() {
            let expect = if n == 4 { want } else { 0.0 };
            assert!((v - expect).abs() < 1e-6, "equation {n}: {v} vs {expect}");
        }
    }
}

#[test]
fn coefficient_metric_matches_builtin() {
    let fd = MetricField::from_coefficients(
        "conformal",
        |x| {
            let s = (2.0 * AMP * (TAU * x[0]).cos()).exp();
            [s; 4]
        },
        1e-4,
    )
    .unwrap();
    let exact = MetricField::conformal_torus(AMP, 0).unwrap();
    let x = [0.3, 0.1, 0.2, 0.5];
    let (a, b) = (fd.d_log_scales(&x), exact.d_log_scales(&x));
    assert!((a[0][0] - b[0][0]).abs() < 1e-7);
    let (a, b) = (fd.dd_log_scales(&x), exact.dd_log_scales(&x));
    assert!((a[0][0][0] - b[0][0][0]).abs() < 1e-4);
    assert!(MetricField::from_coefficients("bad", |_| [1.0, -1.0, 1.0, 1.0], 1e-4).is_err());
}

#[test]
fn case_round_trip() {
    let case = MetricCase::ProductSpheres { r1: 1.0, r2: 2.0 };
    let back: MetricCase = serde_json::from_str(&serde_json::to_string(&case).unwrap()).unwrap();
    assert_eq!(case, back);
    let g = MetricField::from_case(&back).unwrap();
    assert!(FormField2::from_case(&FormCase::ProductAreas { c1: 2.0, c2: 1.0 }, &g).is_ok());
    assert!(FormField2::from_case(&FormCase::ProductAreas { c1: 2.0, c2: 1.0 }, &MetricField::flat()).is_err());
}

#[test]
fn parallel_decomposable_diagnostics_vanish() {
    let grid = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
    let z = FormField::from_fn(&grid, |_| crate::MultiVector::from_mask(4, mask_of(&[0, 1]), 1.5));
    let mu = vec![0.0; grid.n_vertices()];
    let r = heuristic_structure_diagnostics(&z, &mu, &HeuristicOptions { stride: 2, ..Default::default() }).unwrap();
    assert_eq!(r.evaluated, 16);
    for n in [r.integrability, r.mean_curvature_flow, r.multiplier_torsion, r.hamiltonian, r.volume] {
        assert!(n.max < 1e-9, "{r:?}");
    }
}

#[test]
fn warped_decomposable_flow_refines() {
    // dx^12 on e^{2 phi(x3)} delta: a = e^{-2 phi}, and grad ln a = H_a exactly.
    let residual = |m: usize| {
        let grid = TorusGrid::new(GridSpec::unit(4, m).with_metric(MetricSpec::conformal(4, AMP, 2))).unwrap();
        let c = Cochain::coordinate_form(&grid, mask_of(&[0, 1]), 1.0, grid.spacing()[0] * grid.spacing()[1]).unwrap();
        let z = crate::grid::to_pointwise(&c);
        let mu = vec![0.0; grid.n_vertices()];
        let r = heuristic_structure_diagnostics(&z, &mu, &HeuristicOptions { stride: m / 2, ..Default::default() }).unwrap();
        assert!(r.integrability.max < 1e-8 && r.hamiltonian.max < 1e-8);
        r.mean_curvature_flow.max
    };
    let (r1, r2) = (residual(6), residual(12));
    assert!(r2 < r1 / 3.0, "{r1:e} {r2:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adapted_frame_reconstructs(c in prop::array::uniform6(-2.0f64..2.0)) {
        let h = skew_from_upper(&c);
        let (p, m) = duality_norms(&h);
        prop_assume!((p - m).abs() > 1e-3 * (p + m));
        let fr = adapt_components(&h, &IDENTITY, false, 1e-6).unwrap();
        let scale = 1.0 + c.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assert!(fr.reconstruction_error(&h) < 1e-10 * scale);
        let lhs = (fr.a * fr.a - fr.b * fr.b).powi(2);
        prop_assert!((lhs - 4.0 * p * m).abs() < 1e-9 * (1.0 + lhs));
        let e = Matrix4::from_fn(|i, j| fr.frame[i][j]);
        prop_assert!((e * e.transpose() - Matrix4::identity()).abs().max() < 1e-12);
        prop_assert!((e.determinant() - 1.0).abs() < 1e-12);
        prop_assert!(fr.a > fr.b.abs());
    }
}
