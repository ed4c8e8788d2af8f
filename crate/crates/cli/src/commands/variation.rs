use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nlharm::geometry::{riemann_frame, Tensor4};
use nlharm::grid::to_pointwise;
use nlharm::optimality::{killing_identity, variation_report, CurvatureFn, VectorFieldSpec};
use nlharm::{FormField, MultiVector};

use super::{finish, obtain_solution};
use crate::args::VariationArgs;
use crate::artifacts::{Artifacts, Manifest};
use crate::config::{parse_axes, RunConfig};
use crate::{row, CliError, Outcome};

/// Random trigonometric potential `sum c_m sin(2 pi k_m . x / L + theta_m)`.
struct Potential {
    terms: Vec<(f64, [f64; 4], f64)>,
}

impl Potential {
    fn random(rng: &mut ChaCha8Rng, modes: usize, axes: &[usize], periods: &[f64]) -> Self {
        let terms = (0..modes)
            .map(|_| {
                let mut k = [0.0; 4];
                while k.iter().all(|&x| x == 0.0) {
                    for &a in axes {
                        k[a] = rng.gen_range(-1i32..=1) as f64 * 2.0 * PI / periods[a];
                    }
                }
                (rng.gen_range(-1.0..1.0), k, rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        Self { terms }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, k, th)| c * (k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + th).sin()).sum()
    }
}

pub fn run(a: &VariationArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_args("variation-check", &a.common, &a.solver)?;
    if a.fields == 0 || a.modes == 0 {
        return Err(CliError::Usage("--fields and --modes must be positive".into()));
    }
    let report = obtain_solution(&cfg, a.source.from.as_deref())?;
    let grid = report.grid().clone();
    let n = grid.dim();
    let axes = match &a.field_axes {
        Some(s) => parse_axes(s, n)?,
        None => (0..n).collect(),
    };
    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("variation-check", &cfg);
    let z = to_pointwise(&report.z[0]);
    let energy = report.energy();
    let flat = grid.metric().is_flat();
    let riemann = |x: &[f64]| -> Tensor4 { riemann_frame(grid.as_ref(), x) };
    let curvature: Option<CurvatureFn<'_>> = if flat { None } else { Some(&riemann) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let (mut first_worst, mut v1_min, mut v2_min) = (0.0f64, f64::INFINITY, f64::INFINITY);
    for i in 0..a.fields {
        let p = Potential::random(&mut rng, a.modes, &axes, grid.periods());
        let x = VectorFieldSpec::gradient_of(&grid, |y| p.eval(y))?;
        let r = variation_report(&z, &x, curvature)?;
        let scale = x.c1_norm() * energy;
        let rel = r.first_variation.abs() / scale;
        first_worst = first_worst.max(rel);
        v1_min = v1_min.min(r.second_variation_v1 / scale);
        v2_min = v2_min.min(r.second_variation_v2 / scale);
        rows.push(row![
            i,
            r.first_variation,
            r.first_variation_price,
            r.second_variation_v1,
            r.second_variation_v2,
            x.c1_norm(),
            rel
        ]);
    }
    art.table(
        "variations.csv",
        &["field", "first_clifford", "first_price", "second_v1", "second_v2", "c1_norm", "first_relative"],
        &rows,
    )?;

    let mut killing = serde_json::Value::Null;
    if flat {
        let full = (1usize << n) - 1;
        let dvol = FormField::from_fn(&grid, |_| MultiVector::from_mask(n, full, 1.0));
        let mut rows = Vec::new();
        let (mut first, mut second, mut ident) = (0.0f64, 0.0f64, 0.0f64);
        for axis in 0..n {
            let mut dir = vec![0.0; n];
            dir[axis] = 1.0;
            let x = VectorFieldSpec::translation(&grid, &dir)?;
            let r = variation_report(&z, &x, None)?;
            let k = killing_identity(&dvol, &x, None)?;
            first = first.max(r.first_variation.abs());
            second = second.max(r.second_variation_v1.abs());
            ident = ident.max(k.abs());
            rows.push(row![axis + 1, r.first_variation, r.second_variation_v1, k]);
        }
        art.table("translations.csv", &["axis", "first_variation", "second_v1", "killing_identity_dvol"], &rows)?;
        killing = json!({ "first_variation_max": first, "second_v1_max": second, "dvol_identity_max": ident });
    }
    m.residuals.insert("1var".into(), first_worst);
    m.residuals.insert("vart1".into(), (-v1_min).max(0.0));
    m.residuals.insert("vart2".into(), (-v2_min).max(0.0));
    m.results = json!({
        "source": if a.source.from.is_some() { "loaded" } else { "solved" },
        "grid": grid.spec(),
        "energy": energy,
        "fields": a.fields,
        "field_axes": axes.iter().map(|a| a + 1).collect::<Vec<_>>(),
        "first_variation_relative_max": first_worst,
        "second_v1_relative_min": v1_min,
        "second_v2_relative_min": v2_min,
        "translations": killing,
    });
    finish(art, m)
}
