use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::CommandFactory;
use serde::Serialize;

use nlharm::constraint::{EvalMode, QuadraticConstraintSet};
use nlharm::exterior::{mask_label, parse_mask_label};
use nlharm::grid::MetricMode;
use nlharm::hodge::HodgeSolveOptions;
use nlharm::io::read_cochain_on;
use nlharm::minimizer::SolveOptions;
use nlharm::{Cochain, GridSpec, MetricSpec, TorusGrid};

use crate::args::{Cli, CommonArgs, SolverArgs};
use crate::CliError;

/// One term `coefficient * dx^axes` of a named class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassTerm {
    pub coefficient: f64,
    pub axes: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassSpec {
    Named { terms: Vec<ClassTerm> },
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintSpec {
    Pfaffian,
    None,
}

/// Fully resolved run description. The output directory is not serialized so
/// that manifests of identical runs compare equal wherever they are written.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub grid: GridSpec,
    pub class: ClassSpec,
    pub constraint: ConstraintSpec,
    pub eval: EvalMode,
    pub solver: SolveOptions,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_args(command: &str, common: &CommonArgs, solver: &SolverArgs) -> Result<Self, CliError> {
        let mut grid = parse_grid(&common.grid)?;
        if let Some(p) = &common.periods {
            let periods = parse_list(p, "periods")?;
            if periods.len() != grid.dim {
                return usage(format!("--periods needs {} values", grid.dim));
            }
            grid.periods = periods;
        }
        grid.metric = parse_metric(&common.metric, grid.dim)?;
        let class = parse_class(&common.class)?;
        let constraint = match common.constraint.as_str() {
            "pfaffian" => ConstraintSpec::Pfaffian,
            "none" => ConstraintSpec::None,
            other => return usage(format!("unknown constraint {other:?} (expected pfaffian or none)")),
        };
        let eval = match common.eval.as_str() {
            "collocation" => EvalMode::Collocation,
            "cup" => EvalMode::Cup,
            other => return usage(format!("unknown evaluation mode {other:?} (expected collocation or cup)")),
        };
        let solver = solver_options(solver, common.seed)?;
        let cfg = Self {
            command: command.to_string(),
            grid,
            class,
            constraint,
            eval,
            solver,
            out: common.out.clone(),
            seed: common.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(1..=4).contains(&self.grid.dim) {
            return usage("grid dimension must be between 1 and 4");
        }
        if self.grid.resolution.iter().any(|&m| m < 2) {
            return usage("every axis needs at least 2 cells");
        }
        if self.grid.periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return usage("periods must be positive");
        }
        if let ClassSpec::File { path } = &self.class {
            if !path.is_file() {
                return usage(format!("class file {} does not exist", path.display()));
            }
        }
        if let ClassSpec::Named { terms } = &self.class {
            for t in terms {
                let mask = parse_mask_label(&t.axes).map_err(|e| CliError::Usage(e.to_string()))?;
                if mask >> self.grid.dim != 0 {
                    return usage(format!("dx{} uses an axis beyond dimension {}", t.axes, self.grid.dim));
                }
            }
        }
        self.solver.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn build_grid(&self) -> Result<Arc<TorusGrid>, CliError> {
        TorusGrid::new(self.grid.clone()).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// The class as a closed cochain on `grid`.
    pub fn class_cochain(&self, grid: &Arc<TorusGrid>) -> Result<Cochain<f64>, CliError> {
        match &self.class {
            ClassSpec::File { path } => Ok(read_cochain_on(path, grid)?),
            ClassSpec::Named { terms } => {
                let h = grid.spacing();
                let mut total: Option<Cochain<f64>> = None;
                for t in terms {
                    let mask = parse_mask_label(&t.axes)?;
                    let vol: f64 = (0..grid.dim()).filter(|i| mask & (1 << i) != 0).map(|i| h[i]).product();
                    let c = Cochain::coordinate_form(grid, mask, t.coefficient, vol)?;
                    total = Some(match total {
                        None => c,
                        Some(acc) if acc.degree() == c.degree() => acc.add(&c)?,
                        Some(_) => return usage("all terms of a class must have the same degree"),
                    });
                }
                total.ok_or_else(|| CliError::Usage("empty class".into()))
            }
        }
    }

    pub fn constraint_set(&self, grid: &Arc<TorusGrid>) -> Result<Option<QuadraticConstraintSet>, CliError> {
        match self.constraint {
            ConstraintSpec::None => Ok(None),
            ConstraintSpec::Pfaffian => {
                Ok(Some(QuadraticConstraintSet::pfaffian(grid, self.eval).map_err(|e| CliError::Usage(e.to_string()))?))
            }
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number {t:?} in {what}")))).collect()
}

pub fn parse_axes(s: &str, dim: usize) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(a) if (1..=dim).contains(&a) => Ok(a - 1),
            _ => usage(format!("bad axis {t:?}; axes are 1..{dim}")),
        })
        .collect()
}

/// `tN:M` or `tN:M1xM2x...`.
pub fn parse_grid(s: &str) -> Result<GridSpec, CliError> {
    let bad = || CliError::Usage(format!("bad grid {s:?}; expected tN:M or tN:M1x..xMN"));
    let rest = s.strip_prefix('t').or_else(|| s.strip_prefix('T')).ok_or_else(bad)?;
    let (dim, res) = rest.split_once(':').ok_or_else(bad)?;
    let dim: usize = dim.parse().map_err(|_| bad())?;
    let res: Vec<usize> = res.split('x').map(|m| m.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let resolution = match res.len() {
        1 => vec![res[0]; dim],
        n if n == dim => res,
        _ => return Err(bad()),
    };
    Ok(GridSpec { dim, resolution, periods: vec![1.0; dim], metric: MetricSpec::flat() })
}

pub fn parse_metric(s: &str, dim: usize) -> Result<MetricSpec, CliError> {
    if s == "flat" {
        return Ok(MetricSpec::flat());
    }
    let mut modes = Vec::new();
    for part in s.split(';') {
        let fields: Vec<&str> = part.split(':').collect();
        let bad = || CliError::Usage(format!("bad metric {part:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let axis = |t: Option<&&str>| -> Result<usize, CliError> {
            match t {
                None => Ok(0),
                Some(t) => Ok(parse_axes(t, dim)?[0]),
            }
        };
        let spec = match fields[0] {
            "conformal" if (2..=3).contains(&fields.len()) => MetricSpec::conformal(dim, num(fields[1])?, axis(fields.get(2))?),
            "warped" if (2..=3).contains(&fields.len()) => MetricSpec::warped(dim, num(fields[1])?, axis(fields.get(2))?),
            "mode" if (3..=4).contains(&fields.len()) => {
                let amplitudes = parse_list(fields[1], "metric amplitudes")?;
                let wave =
                    fields[2].split(',').map(|t| t.trim().parse::<i32>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
                let phase = fields.get(3).map(|t| num(t)).transpose()?.unwrap_or(0.0);
                if amplitudes.len() != dim || wave.len() != dim {
                    return usage(format!("metric mode needs {dim} amplitudes and {dim} wave numbers"));
                }
                MetricSpec { modes: vec![MetricMode { amplitudes, wave, phase }] }
            }
            _ => return Err(bad()),
        };
        modes.extend(spec.modes);
    }
    Ok(MetricSpec { modes })
}

/// `dx12`, `dx12+dx34`, `2*dx12-0.5*dx34`, `-dx13` or `file:PATH`.
pub fn parse_class(s: &str) -> Result<ClassSpec, CliError> {
    if let Some(p) = s.strip_prefix("file:") {
        return Ok(ClassSpec::File { path: PathBuf::from(p) });
    }
    let bad = || CliError::Usage(format!("bad class {s:?}"));
    let mut pieces = Vec::new();
    let mut start = 0;
    let bytes = s.as_bytes();
    for i in 1..bytes.len() {
        let c = bytes[i];
        if (c == b'+' || c == b'-') && !matches!(bytes[i - 1], b'e' | b'E' | b'*') {
            pieces.push(&s[start..i]);
            start = i;
        }
    }
    pieces.push(&s[start..]);
    let mut terms = Vec::new();
    for p in pieces {
        let p = p.trim();
        let (sign, body) = match p.as_bytes().first() {
            Some(b'-') => (-1.0, &p[1..]),
            Some(b'+') => (1.0, &p[1..]),
            _ => (1.0, p),
        };
        let (coef, form) = match body.split_once('*') {
            Some((c, f)) => (c.trim().parse::<f64>().map_err(|_| bad())?, f.trim()),
            None => (1.0, body.trim()),
        };
        let axes = form.strip_prefix("dx").ok_or_else(bad)?;
        let mask = parse_mask_label(axes).map_err(|_| bad())?;
        if mask == 0 {
            return Err(bad());
        }
        terms.push(ClassTerm { coefficient: sign * coef, axes: mask_label(mask) });
    }
    Ok(ClassSpec::Named { terms })
}

fn solver_options(a: &SolverArgs, seed: u64) -> Result<SolveOptions, CliError> {
    let d = SolveOptions::default();
    let mut hodge = HodgeSolveOptions::default();
    if let Some(t) = a.cg_tol {
        hodge.cg_tolerance = t;
    }
    Ok(SolveOptions {
        outer_max: a.outer_max.unwrap_or(d.outer_max),
        penalty_init: a.penalty_init.unwrap_or(d.penalty_init),
        penalty_growth: a.penalty_growth.unwrap_or(d.penalty_growth),
        constraint_tol: a.constraint_tol.unwrap_or(d.constraint_tol),
        gradient_tol: a.gradient_tol.unwrap_or(d.gradient_tol),
        inner_max: a.inner_max.unwrap_or(d.inner_max),
        inner_tol: a.inner_tol.unwrap_or(d.inner_tol),
        init_perturbation: a.perturbation.unwrap_or(d.init_perturbation),
        seed,
        hodge,
    })
}

pub fn hodge_options(cg_tol: Option<f64>) -> Result<HodgeSolveOptions, CliError> {
    let mut o = HodgeSolveOptions::default();
    if let Some(t) = cg_tol {
        o.cg_tolerance = t;
    }
    o.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(o)
}

/// Parse a `key = value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Splice the entries of `--config FILE` in front of the command-line flags
/// of the subcommand, so that later (explicit) flags override them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<Option<&str>> = argv.iter().map(|a| a.to_str()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        match a {
            Some("--config") => path = strs.get(i + 1).copied().flatten().map(PathBuf::from),
            Some(s) if s.starts_with("--config=") => path = Some(PathBuf::from(&s["--config=".len()..])),
            _ => {}
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(sub) = strs.get(1).copied().flatten() else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(sub) else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (key, value) in read_config_file(&path)? {
        let arg = sc.get_arguments().find(|a| a.get_long() == Some(key.as_str()));
        match arg {
            Some(a) if a.get_action().takes_values() => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
            Some(_) => match value.as_str() {
                "true" | "yes" | "1" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "no" | "0" => {}
                _ => return usage(format!("config key {key} expects true or false")),
            },
            None if key == "config" => return usage("config files cannot include other config files"),
            None => return usage(format!("config key {key:?} is not an option of {sub}")),
        }
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.extend(argv[..2].iter().cloned());
    out.extend(injected);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}
