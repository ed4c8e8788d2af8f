use serde_json::json;

use nlharm::analysis::{density_curve, lambda_sweep, monotonicity_check, morrey_norm, MorreyOptions, QuadratureOptions};
use nlharm::grid::to_pointwise;

use super::{finish, harmonic_of_class, obtain_solution};
use crate::args::MonotonicityArgs;
use crate::artifacts::{Artifacts, Manifest};
use crate::config::{parse_list, RunConfig};
use crate::{row, CliError, Outcome};

/// Number of radii in the default sequence.
const DEFAULT_RADII: usize = 8;

pub fn run(a: &MonotonicityArgs) -> Result<Outcome, CliError> {
    let cfg = RunConfig::from_args("monotonicity", &a.common, &a.solver)?;
    let (z, source) = if a.source.from.is_some() || a.solve {
        (obtain_solution(&cfg, a.source.from.as_deref())?.z[0].clone(), "minimizer")
    } else {
        let grid = cfg.build_grid()?;
        (harmonic_of_class(&cfg, &grid)?, "harmonic")
    };
    let grid = z.grid().clone();
    let n = grid.dim();
    let degree = z.degree();
    let center = match &a.center {
        Some(c) => parse_list(c, "center")?,
        None => grid.periods().iter().map(|p| 0.5 * p).collect(),
    };
    if center.len() != n {
        return Err(CliError::Usage(format!("--center needs {n} coordinates")));
    }
    let quad = QuadratureOptions { depth: a.depth, ..QuadratureOptions::default() };
    let radii = match &a.radii {
        Some(r) => parse_list(r, "radii")?,
        None => {
            let lo = quad.min_radius_cells * grid.spacing().iter().cloned().fold(0.0, f64::max);
            let hi = 0.45 * grid.min_period();
            (0..DEFAULT_RADII).map(|i| lo + (hi - lo) * i as f64 / (DEFAULT_RADII - 1) as f64).collect()
        }
    };
    let lambdas = parse_list(&a.lambdas, "lambdas")?;
    let field = to_pointwise(&z);

    let mut art = Artifacts::create(&cfg.out)?;
    let mut m = Manifest::new("monotonicity", &cfg);
    let curve = density_curve(&field, degree, &center, &radii, a.lambda, &quad)?;
    curve.write_csv(&art.path("density.csv"))?;
    let verdict = monotonicity_check(&curve, a.ripple);

    let centers = vec![center.clone()];
    let sweep = lambda_sweep(&field, degree, &centers, &radii, &lambdas, a.ripple, &quad)?;
    let rows: Vec<_> = sweep.entries.iter().map(|e| row![e.lambda, e.worst_violation, e.monotone]).collect();
    art.table("lambda_sweep.csv", &["lambda", "worst_violation", "monotone"], &rows)?;

    let morrey = morrey_norm(&field, a.morrey_mu, &MorreyOptions { quadrature: quad.clone(), ..MorreyOptions::default() })?;

    m.residuals.insert("pricemono".into(), verdict.worst_violation);
    m.results = json!({
        "source": source,
        "degree": degree,
        "center": center,
        "radii": radii,
        "lambda": a.lambda,
        "energies": curve.energies,
        "caveat": curve.caveat,
        "verdict": verdict,
        "sweep": sweep,
        "morrey": morrey,
    });
    finish(art, m)
}
