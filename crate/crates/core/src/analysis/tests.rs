use super::*;
use crate::exterior::{mask_of, MultiVector};
use crate::grid::{GridSpec, MetricSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn flat(m: usize) -> Arc<TorusGrid> {
    TorusGrid::new(GridSpec::unit(4, m)).unwrap()
}

fn constant(grid: &Arc<TorusGrid>, c: f64) -> FormField<f64> {
    FormField::from_fn(grid, |_| MultiVector::from_mask(4, mask_of(&[0, 1]), c))
}

#[test]
fn constant_field_reproduces_ball_volume() {
    let g = flat(8);
    let z = constant(&g, 1.0);
    let radii = [0.25, 0.3, 0.35, 0.4, 0.45];
    for center in [vec![0.5; 4], vec![0.13, 0.71, 0.4, 0.05]] {
        let curve = density_curve(&z, 2, &center, &radii, 0.0, &QuadratureOptions::default()).unwrap();
        for (r, v) in radii.iter().zip(&curve.values) {
            let exact = PI * PI * r.powi(4) / 2.0;
            assert!((v - exact).abs() < 1e-3 * exact, "r = {r}: {v} vs {exact}");
        }
        assert!(curve.values.windows(2).all(|w| w[1] > w[0]));
        let verdict = monotonicity_check(&curve, 0.0);
        assert!(verdict.monotone && verdict.worst_violation == 0.0 && verdict.worst_pair.is_none());
    }
}

#[test]
fn ball_volume_error_shrinks_with_depth() {
    let g = flat(8);
    let z = constant(&g, 1.0);
    let r: f64 = 0.37;
    let exact = PI * PI * r.powi(4) / 2.0;
    let err = |depth| (ball_energies(&z, &[0.31, 0.52, 0.47, 0.66], &[r], depth).unwrap()[0] - exact).abs();
    assert!(err(3) < err(0));
    assert!(err(3) < 1e-4 * exact);
}

#[test]
fn zero_field_gives_zero_curve() {
    let g = flat(4);
    let z = constant(&g, 0.0);
    let curve = density_curve(&z, 2, &[0.5; 4], &[0.5, 0.6], 1.0, &QuadratureOptions::default()).unwrap();
    assert!(curve.values.iter().all(|v| *v == 0.0));
    assert!(monotonicity_check(&curve, 0.0).monotone);
    let m = morrey_norm(&z, 0.5, &MorreyOptions::default()).unwrap();
    assert_eq!(m.estimate, 0.0);
}

#[test]
fn decreasing_curve_is_flagged() {
    let curve = DensityCurve {
        center: vec![0.0; 4],
        radii: vec![1.0, 2.0, 3.0, 4.0],
        energies: vec![0.0; 4],
        values: vec![1.0, 2.0, 1.5, 1.8],
        lambda: 0.0,
        degree: 2,
        dim: 4,
        caveat: None,
    };
    let v = monotonicity_check(&curve, 1e-3);
    assert!(!v.monotone);
    assert!((v.worst_violation - 0.25).abs() < 1e-15);
    assert_eq!(v.worst_pair, Some((2.0, 3.0)));
}

#[test]
fn radius_validation() {
    let g = flat(4);
    let z = constant(&g, 1.0);
    let opts = QuadratureOptions::default();
    assert!(matches!(density_curve(&z, 2, &[0.5; 4], &[0.4], 0.0, &opts), Err(Error::UnresolvableRadius { .. })));
    assert!(density_curve(&z, 2, &[0.5; 4], &[0.6, 0.55], 0.0, &opts).is_err());
    assert!(density_curve(&z, 2, &[0.5; 3], &[0.6], 0.0, &opts).is_err());
}

#[test]
fn constant_field_morrey_is_l2_norm() {
    let g = flat(4);
    let z = constant(&g, 1.0);
    let m = morrey_norm(&z, 0.0, &MorreyOptions::default()).unwrap();
    assert!((m.estimate - 1.0).abs() < 1e-12, "{m:?}");
    assert!(m.estimate >= 0.0);
}

#[test]
fn scale_covariance() {
    let g = TorusGrid::new(GridSpec::unit(4, 4).with_metric(MetricSpec::conformal(4, 0.2, 0))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vals = (0..g.n_vertices()).map(|_| MultiVector::from_mask(4, mask_of(&[0, 2]), rng.gen::<f64>())).collect();
    let z = FormField::new(&g, vals).unwrap();
    let z3 = z.map(|_, v| v.scale(3.0));
    let opts = QuadratureOptions::default();
    let a = density_curve(&z, 2, &[0.2; 4], &[0.5, 0.7], 0.5, &opts).unwrap();
    let b = density_curve(&z3, 2, &[0.2; 4], &[0.5, 0.7], 0.5, &opts).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((9.0 * x - y).abs() < 1e-12 * y);
    }
    let ma = morrey_norm(&z, 1.0, &MorreyOptions::default()).unwrap();
    let mb = morrey_norm(&z3, 1.0, &MorreyOptions::default()).unwrap();
    assert!((9.0 * ma.estimate.powi(2) - mb.estimate.powi(2)).abs() < 1e-12 * mb.estimate.powi(2));
}

#[test]
fn lattice_refinement_never_decreases_morrey() {
    let g = flat(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let vals: Vec<MultiVector<f64>> = (0..g.n_vertices())
            .map(|_| {
                let mut m = MultiVector::zero(4);
                for s in [mask_of(&[0, 1]), mask_of(&[1, 3]), mask_of(&[2, 3])] {
                    m.set(s, rng.gen::<f64>() * 2.0 - 1.0);
                }
                m
            })
            .collect();
        let z = FormField::new(&g, vals).unwrap();
        let mu = rng.gen::<f64>() * 2.0;
        let coarse = MorreyOptions { centers_per_axis: 1, levels: 1, ..Default::default() };
        let fine = MorreyOptions { centers_per_axis: 2, levels: 2, ..Default::default() };
        let a = morrey_norm(&z, mu, &coarse).unwrap();
        let b = morrey_norm(&z, mu, &fine).unwrap();
        assert!(b.estimate >= a.estimate, "{} < {}", b.estimate, a.estimate);
    }
}

#[test]
fn monotone_verdict_survives_larger_lambda() {
    let g = TorusGrid::new(GridSpec::unit(4, 6).with_metric(MetricSpec::conformal(4, 0.2, 0))).unwrap();
    let z = FormField::from_fn(&g, |x| MultiVector::from_mask(4, mask_of(&[0, 1]), 1.0 + 0.5 * (6.0 * x[0]).sin()));
    let radii = [0.35, 0.4, 0.45, 0.5];
    let centers = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.6; 4]];
    let sweep = lambda_sweep(&z, 2, &centers, &radii, &[4.0, 0.0, 1.0, 0.5, 2.0], 1e-3, &QuadratureOptions::default()).unwrap();
    assert_eq!(sweep.entries.len(), 5);
    assert!(sweep.entries.windows(2).all(|w| w[0].lambda < w[1].lambda));
    let first = sweep.entries.iter().position(|e| e.monotone).unwrap();
    assert!(sweep.entries[first..].iter().all(|e| e.monotone));
    assert_eq!(sweep.smallest_monotone, Some(sweep.entries[first].lambda));
}

#[test]
fn curve_csv_round_trips() {
    let g = flat(4);
    let z = constant(&g, 1.0);
    let curve = density_curve(&z, 2, &[0.5; 4], &[0.5, 0.6], 0.0, &QuadratureOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    curve.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,value"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row, vec![0.5, curve.values[0]]);
}
