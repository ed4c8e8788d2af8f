use serde_json::json;

use nlharm::framecalc::{
    frame_equations, BochnerReport, BochnerVariant, FormCase, FormField2, FrameCalc, FrameOptions, MetricCase, MetricField,
};
use nlharm::Error;

use super::finish;
use crate::args::{BochnerArgs, SolverArgs};
use crate::artifacts::{Artifacts, Manifest};
use crate::config::{parse_axes, parse_list, RunConfig};
use crate::{row, CliError, Outcome};

/// Residuals below this are treated as exact zeros when forming order ratios.
const RATIO_FLOOR: f64 = 1e-12;

fn six(s: &str, what: &str) -> Result<[f64; 6], CliError> {
    let v = parse_list(s, what)?;
    v.try_into().map_err(|_| CliError::Usage(format!("{what} needs six components (12,13,14,23,24,34)")))
}

pub fn parse_case(s: &str, cfg: &RunConfig) -> Result<MetricCase, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("bad metric case {s:?}"));
    Ok(match parts[..] {
        ["flat"] => MetricCase::Flat,
        ["torus"] => {
            if cfg.grid.dim != 4 {
                return Err(CliError::Usage("the torus case needs a 4-dimensional --grid".into()));
            }
            MetricCase::Torus { metric: cfg.grid.metric.clone() }
        }
        ["conformal", a] | ["conformal", a, _] => MetricCase::ConformalTorus {
            amplitude: a.parse().map_err(|_| bad())?,
            axis: match parts.get(2) {
                Some(x) => parse_axes(x, 4)?[0],
                None => 0,
            },
        },
        ["spheres", r] => {
            let r = parse_list(r, "sphere radii")?;
            if r.len() != 2 {
                return Err(bad());
            }
            MetricCase::ProductSpheres { r1: r[0], r2: r[1] }
        }
        _ => return Err(bad()),
    })
}

pub fn parse_form(s: &str) -> Result<FormCase, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("bad form {s:?}"));
    Ok(match parts[..] {
        ["constant", c] => FormCase::Constant { components: six(c, "constant form")? },
        ["orthonormal", c] => FormCase::Orthonormal { components: six(c, "orthonormal form")? },
        ["affine", axis, base, slope] => FormCase::Affine {
            base: six(base, "affine base")?,
            slope: six(slope, "affine slope")?,
            axis: parse_axes(axis, 4)?[0],
        },
        ["areas", c] => {
            let c = parse_list(c, "area coefficients")?;
            if c.len() != 2 {
                return Err(bad());
            }
            FormCase::ProductAreas { c1: c[0], c2: c[1] }
        }
        _ => return Err(bad()),
    })
}

fn ratio(coarse: f64, fine: f64) -> Option<f64> {
    (fine.abs() > RATIO_FLOOR).then(|| coarse.abs() / fine.abs())
}

fn masked<T>(r: nlharm::Result<T>) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Masked(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn span(v: &[f64]) -> serde_json::Value {
    if v.is_empty() {
        return serde_json::Value::Null;
    }
    json!({ "min": v.iter().cloned().fold(f64::INFINITY, f64::min), "max": v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) })
}

pub fn run(a: &BochnerArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_args("bochner-check", &a.common, &SolverArgs::default())?;
    if a.points == 0 || !(a.eps > 0.0) || !(a.order_eps > 0.0) {
        return Err(CliError::Usage("--points, --eps and --order-eps must be positive".into()));
    }
    let case = parse_case(&a.metric_case, &cfg)?;
    let form_case = parse_form(&a.form)?;
    let metric = MetricField::from_case(&case)?;
    let form = FormField2::from_case(&form_case, &metric)?;
    let calc = FrameCalc::new(&metric, &form, FrameOptions { eps: a.eps, ..FrameOptions::default() })?;
    let coarse = FrameCalc::new(&metric, &form, FrameOptions { eps: a.order_eps, ..FrameOptions::default() })?;
    let fine = FrameCalc::new(&metric, &form, FrameOptions { eps: a.order_eps / 2.0, ..FrameOptions::default() })?;

    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("bochner-check", &cfg);
    let points = metric.sample_points(a.points, cfg.seed);

    let mut term_rows = Vec::new();
    let mut eq_rows = Vec::new();
    let mut order_rows = Vec::new();
    let mut eq_max = [0.0f64; 8];
    let (mut exboch, mut critical_terms, mut mixed_torsion) = (0.0f64, 0.0f64, 0.0f64);
    let (mut gauss_ratios, mut bochner_ratios) = (Vec::new(), Vec::new());
    let (mut masked_points, mut critical_found) = (0usize, 0usize);
    let record = |i: usize, r: &BochnerReport, rows: &mut Vec<_>| {
        let v = match r.variant {
            BochnerVariant::Critical => "critical",
            BochnerVariant::Curvature => "curvature",
        };
        rows.push(row![i, v, "lhs", r.lhs]);
        for t in &r.terms {
            rows.push(row![i, v, t.name.as_str(), t.value]);
        }
        rows.push(row![i, v, "residual", r.residual]);
    };
    for (i, x) in points.iter().enumerate() {
        let Some(packet) = masked(calc.packet(x))? else {
            masked_points += 1;
            continue;
        };
        let eqs = frame_equations(&packet);
        for (w, e) in eq_max.iter_mut().zip(eqs) {
            *w = w.max(e.abs());
        }
        mixed_torsion = mixed_torsion.max(packet.tensors.torsion_b[0].hypot(packet.tensors.torsion_b[1]));
        let mut eq_row = row![i];
        eq_row.extend(eqs.iter().map(|e| (*e).into()));
        eq_rows.push(eq_row);

        if let Some(r) = masked(calc.bochner_residual(x, BochnerVariant::Curvature))? {
            exboch = exboch.max(r.residual.abs());
            record(i, &r, &mut term_rows);
        }
        if let Some(cp) = masked(calc.find_critical_point(x))? {
            if let Some(r) = masked(calc.bochner_residual(&cp.point, BochnerVariant::Critical))? {
                critical_found += 1;
                exboch = exboch.max(r.residual.abs());
                critical_terms = critical_terms.max(r.terms.iter().map(|t| t.value.abs()).fold(0.0, f64::max));
                record(i, &r, &mut term_rows);
            }
        }

        let gc = masked(coarse.sectional_curvatures(x))?;
        let gf = masked(fine.sectional_curvatures(x))?;
        let bc = masked(coarse.bochner_residual(x, BochnerVariant::Curvature))?;
        let bf = masked(fine.bochner_residual(x, BochnerVariant::Curvature))?;
        if let (Some(gc), Some(gf), Some(bc), Some(bf)) = (gc, gf, bc, bf) {
            let gr = ratio(gc.deviation, gf.deviation);
            let br = ratio(bc.residual, bf.residual);
            gauss_ratios.extend(gr);
            bochner_ratios.extend(br);
            order_rows.push(row![
                i,
                gc.deviation,
                gf.deviation,
                gr.unwrap_or(f64::NAN),
                bc.residual,
                bf.residual,
                br.unwrap_or(f64::NAN)
            ]);
        }
    }
    art.table("bochner_terms.csv", &["point", "variant", "name", "value"], &term_rows)?;
    art.table("frame_equations.csv", &["point", "a3", "a4", "b1", "b2", "a1", "a2", "b3", "b4"], &eq_rows)?;
    art.table(
        "order.csv",
        &["point", "gauss_coarse", "gauss_fine", "gauss_ratio", "bochner_coarse", "bochner_fine", "bochner_ratio"],
        &order_rows,
    )?;
    let point_rows: Vec<_> = points.iter().enumerate().map(|(i, x)| row![i, x[0], x[1], x[2], x[3]]).collect();
    art.table("points.csv", &["point", "x1", "x2", "x3", "x4"], &point_rows)?;

    m.residuals.insert("exboch".into(), exboch);
    for (key, idx) in [("mu3", 0), ("mu4", 1), ("mu6", 4), ("mu7", 5)] {
        m.residuals.insert(key.into(), eq_max[idx]);
    }
    m.residuals.insert("mu5".into(), mixed_torsion);
    m.results = json!({
        "metric": case,
        "form": form_case,
        "eps": a.eps,
        "order_eps": a.order_eps,
        "points": a.points,
        "masked": masked_points,
        "critical_points": critical_found,
        "bochner_residual_max": exboch,
        "critical_term_max": critical_terms,
        "frame_equation_max": eq_max,
        "gauss_ratio": span(&gauss_ratios),
        "bochner_ratio": span(&bochner_ratios),
    });
    finish(art, m)
}
