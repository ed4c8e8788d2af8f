use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "nlharm", version, about = "Nonlinear harmonic forms on discretized tori", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the energy in a cohomology class under the z ^ z = 0 constraint.
    Solve(SolveArgs),
    /// Harmonic representative of a class, plus random Hodge decompositions.
    Hodge(HodgeArgs),
    /// Betti numbers from the discrete Laplacian kernels.
    Betti(BettiArgs),
    /// Euler-Lagrange residual, recovered multiplier and tangent-space check.
    ElCheck(ElCheckArgs),
    /// First and second variation along random gradient fields and translations.
    VariationCheck(VariationArgs),
    /// Indefinite Bochner formula, Gauss equation and frame equations on test metrics.
    BochnerCheck(BochnerArgs),
    /// Ball-energy density curves, lambda sweep and Morrey estimate.
    Monotonicity(MonotonicityArgs),
    /// Run the built-in invariant suite.
    Selftest(SelftestArgs),
    /// Collate the artifacts of one or more runs into a summary.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Hodge(_) => "hodge",
            Command::Betti(_) => "betti",
            Command::ElCheck(_) => "el-check",
            Command::VariationCheck(_) => "variation-check",
            Command::BochnerCheck(_) => "bochner-check",
            Command::Monotonicity(_) => "monotonicity",
            Command::Selftest(_) => "selftest",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Torus and resolution, `tN:M` or `tN:M1xM2x..`.
    #[arg(long, default_value = "t4:8")]
    pub grid: String,
    /// Comma-separated periods (default: all 1).
    #[arg(long)]
    pub periods: Option<String>,
    /// `flat`, `conformal:A[:AXIS]`, `warped:A[:AXIS]` or `mode:A1,..:K1,..[:PHASE]`; several modes join with `;`.
    #[arg(long, default_value = "flat")]
    pub metric: String,
    /// Named class such as `dx12`, `dx12+dx34`, `0.5*dx13-dx24`, or `file:PATH` (cochain CSV).
    #[arg(long, default_value = "dx12")]
    pub class: String,
    /// `pfaffian` or `none`.
    #[arg(long, default_value = "pfaffian")]
    pub constraint: String,
    /// Constraint evaluation: `collocation` or `cup`.
    #[arg(long, default_value = "collocation")]
    pub eval: String,
    /// Output directory.
    #[arg(long, default_value = "nlharm-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plain-text `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub outer_max: Option<usize>,
    #[arg(long)]
    pub inner_max: Option<usize>,
    #[arg(long)]
    pub constraint_tol: Option<f64>,
    #[arg(long)]
    pub gradient_tol: Option<f64>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub penalty_init: Option<f64>,
    #[arg(long)]
    pub penalty_growth: Option<f64>,
    /// Scale of a random coexact perturbation of the starting point.
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// Relative residual of the inner Hodge Laplacian solves.
    #[arg(long)]
    pub cg_tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct HodgeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    /// Number of random cochains to decompose.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Degree of the random cochains (default: degree of the class).
    #[arg(long)]
    pub degree: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BettiArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub cg_tol: Option<f64>,
}

/// Where the field under study comes from.
#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// Output directory of an earlier `solve`; otherwise the solver runs first.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ElCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of sampled formal-tangent directions.
    #[arg(long, default_value_t = 20)]
    pub directions: usize,
    /// Sample every STRIDE-th cell for the frame diagnostics (0 disables them).
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VariationArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of random gradient fields.
    #[arg(long, default_value_t = 20)]
    pub fields: usize,
    /// Fourier modes per random potential.
    #[arg(long, default_value_t = 3)]
    pub modes: usize,
    /// Axes (1-based, comma-separated) the random potentials may depend on.
    #[arg(long)]
    pub field_axes: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BochnerArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `flat`, `conformal:A[:AXIS]`, `spheres:R1,R2` or `torus` (uses --metric).
    #[arg(long = "case", default_value = "conformal:0.1")]
    pub metric_case: String,
    /// `constant:H12,H13,H14,H23,H24,H34`, `orthonormal:..`, `affine:AXIS:BASE6:SLOPE6` or `areas:C1,C2`.
    #[arg(long, default_value = "constant:2,0,0,0,0,1")]
    pub form: String,
    /// Number of sample points.
    #[arg(long, default_value_t = 8)]
    pub points: usize,
    /// Finite-difference step of the primary evaluation.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Step of the order study (repeated at half the step).
    #[arg(long, default_value_t = 1e-2)]
    pub order_eps: f64,
}

#[derive(Debug, Clone, Args)]
pub struct MonotonicityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Minimize first instead of using the harmonic representative.
    #[arg(long)]
    pub solve: bool,
    /// Ball center (default: middle of the torus).
    #[arg(long)]
    pub center: Option<String>,
    /// Comma-separated increasing radii (default: eight radii from 2 cells to 0.45 of the shortest period).
    #[arg(long)]
    pub radii: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Relative decrease tolerated before a curve counts as non-monotone.
    #[arg(long, default_value_t = 0.0)]
    pub ripple: f64,
    /// Lambda values of the sweep.
    #[arg(long, default_value = "0,1,2,4,8")]
    pub lambdas: String,
    /// Morrey exponent.
    #[arg(long, default_value_t = 0.0)]
    pub morrey_mu: f64,
    /// Subdivision depth for cells cut by a sphere.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value = "nlharm-selftest")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories to collate.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Where to write `summary.txt` and `bundle.json` (default: the first run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
