//! Pointwise frame calculus for a 2-form `h` on a 4-manifold with a diagonal
//! metric given in a single chart.
//!
//! Frames are stored as rows `E[i]` in the orthonormal coordinate basis
//! `v_k = e^{-phi_k} d/dx_k`, so `e_i = sum_k E[i][k] v_k`, and
//! `nabla_{e_i} e_j = gamma[i][j][k] e_k`. Adapted frames put
//! `h = a w^1^w^2 + b w^3^w^4` with `a > |b|`; `b` carries the sign fixed by
//! the orientation. Derivatives of frames and scalars are centered
//! differences of step `eps` in chart coordinates; the frame field near a
//! point is the adapted frame at each nearby point aligned to one fixed
//! reference frame, which makes it smooth.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::exterior::mask_of;
use crate::geometry::{christoffel, frame_connection, riemann_frame, DiagonalMetric, Mat4, Tensor3, Tensor4, Vec4};
use crate::grid::{FormField, GridSpec, MetricSpec, TorusGrid};

const IDENTITY: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

/// Largest entry change between a frame and its FD neighbours before the
/// frame field is declared discontinuous.
const CONTINUITY_LIMIT: f64 = 0.25;

/// Minimum projection of a reference vector onto the target plane when
/// continuing a frame field.
const ALIGNMENT_FLOOR: f64 = 0.5;

// ---------------------------------------------------------------- metrics

/// Named metric test cases, as they appear in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricCase {
    Flat,
    /// `e^{2 a cos(2 pi x_axis)} delta` on the unit torus.
    ConformalTorus {
        amplitude: f64,
        axis: usize,
    },
    /// Any mode-sum torus metric on the unit torus.
    Torus {
        metric: MetricSpec,
    },
    /// `S^2(r1) x S^2(r2)` in charts `(theta1, phi1, theta2, phi2)`.
    ProductSpheres {
        r1: f64,
        r2: f64,
    },
}

type Coefficients = Arc<dyn Fn(&[f64]) -> Vec4 + Send + Sync>;

#[derive(Clone)]
enum MetricKind {
    Flat,
    Grid(Arc<TorusGrid>),
    Spheres { r1: f64, r2: f64 },
    Coefficients { g: Coefficients, eps: f64 },
}

/// Diagonal 4-metric on a chart with first and second derivatives.
#[derive(Clone)]
pub struct MetricField {
    label: String,
    kind: MetricKind,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField").field("label", &self.label).finish()
    }
}

/// Tolerance of the construction-time derivative cross-check, relative to `1 + |value|`.
const CROSS_CHECK_TOL: f64 = 1e-5;
const CROSS_CHECK_STEP: f64 = 1e-4;
const CROSS_CHECK_SAMPLES: usize = 16;

impl MetricField {
    pub fn flat() -> Self {
        Self { label: "flat".into(), kind: MetricKind::Flat }
    }

    pub fn conformal_torus(amplitude: f64, axis: usize) -> Result<Self> {
        if axis >= 4 {
            return contract(format!("conformal axis {axis} out of range"));
        }
        Self::torus(MetricSpec::conformal(4, amplitude, axis))
    }

    pub fn torus(metric: MetricSpec) -> Result<Self> {
        let grid = TorusGrid::new(GridSpec::unit(4, 3).with_metric(metric))?;
        Self::checked(Self { label: format!("torus:{}", grid.metric().id()), kind: MetricKind::Grid(grid) })
    }

    /// Metric of an existing 4-dimensional grid (same periods and modes).
    pub fn from_grid(grid: &Arc<TorusGrid>) -> Result<Self> {
        if grid.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, found: grid.dim() });
        }
        Ok(Self { label: format!("torus:{}", grid.metric().id()), kind: MetricKind::Grid(grid.clone()) })
    }

    pub fn product_spheres(r1: f64, r2: f64) -> Result<Self> {
        if !(r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
            return contract(format!("sphere radii must be positive, got {r1}, {r2}"));
        }
        Self::checked(Self { label: format!("spheres:{r1},{r2}"), kind: MetricKind::Spheres { r1, r2 } })
    }

    /// Metric from coefficient callbacks `x -> (g_11, .., g_44)`; derivatives
    /// are centered differences of `ln g` with step `eps`.
    pub fn from_coefficients(
        label: impl Into<String>,
        g: impl Fn(&[f64]) -> Vec4 + Send + Sync + 'static,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return contract("finite-difference step must be positive");
        }
        Self::checked(Self { label: label.into(), kind: MetricKind::Coefficients { g: Arc::new(g), eps } })
    }

    pub fn from_case(case: &MetricCase) -> Result<Self> {
        match case {
            MetricCase::Flat => Ok(Self::flat()),
            MetricCase::ConformalTorus { amplitude, axis } => Self::conformal_torus(*amplitude, *axis),
            MetricCase::Torus { metric } => Self::torus(metric.clone()),
            MetricCase::ProductSpheres { r1, r2 } => Self::product_spheres(*r1, *r2),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sphere radii when this is a product of round spheres.
    pub fn sphere_radii(&self) -> Option<(f64, f64)> {
        match self.kind {
            MetricKind::Spheres { r1, r2 } => Some((r1, r2)),
            _ => None,
        }
    }

    /// Maps `u` in the unit cube to a chart point away from coordinate
    /// singularities (polar angles stay in `[pi/4, 3 pi/4]`).
    pub fn chart_point(&self, u: &Vec4) -> Vec4 {
        match self.kind {
            MetricKind::Spheres { .. } => {
                let pi = std::f64::consts::PI;
                [pi * (0.25 + 0.5 * u[0]), 2.0 * pi * u[1], pi * (0.25 + 0.5 * u[2]), 2.0 * pi * u[3]]
            }
            MetricKind::Grid(ref g) => {
                let p = g.periods();
                [u[0] * p[0], u[1] * p[1], u[2] * p[2], u[3] * p[3]]
            }
            _ => *u,
        }
    }

    /// Deterministic pseudo-random chart points.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec4> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.chart_point(&[rng.gen(), rng.gen(), rng.gen(), rng.gen()])).collect()
    }

    /// Largest disagreement between the derivative callbacks and centered
    /// differences of the values, relative to `1 + |value|`, plus the smallest
    /// metric coefficient seen.
    pub fn cross_check(&self, points: &[Vec4], step: f64) -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut min_g = f64::INFINITY;
        for x in points {
            let d = self.d_log_scales(x);
            let dd = self.dd_log_scales(x);
            let g = match &self.kind {
                MetricKind::Coefficients { g, .. } => g(x),
                _ => self.metric_diag(x),
            };
            for gi in g {
                min_g = if gi.is_nan() { f64::NAN } else { min_g.min(gi) };
                if min_g.is_nan() {
                    return (f64::NAN, f64::NAN);
                }
            }
            for k in 0..4 {
                let (xp, xm) = (shifted(x, k, step), shifted(x, k, -step));
                let (pp, pm) = (self.log_scales(&xp), self.log_scales(&xm));
                let (dp, dm) = (self.d_log_scales(&xp), self.d_log_scales(&xm));
                for i in 0..4 {
                    let fd = (pp[i] - pm[i]) / (2.0 * step);
                    worst = worst.max((fd - d[k][i]).abs() / (1.0 + d[k][i].abs()));
                    for l in 0..4 {
                        let fd2 = (dp[l][i] - dm[l][i]) / (2.0 * step);
                        worst = worst.max((fd2 - dd[k][l][i]).abs() / (1.0 + dd[k][l][i].abs()));
                    }
                }
            }
        }
        (worst, min_g)
    }

    fn checked(self) -> Result<Self> {
        let points = self.sample_points(CROSS_CHECK_SAMPLES, 0);
        let (step, tol) = match self.kind {
            // FD-derived derivatives are compared against a doubled step (Richardson check).
            MetricKind::Coefficients { eps, .. } => (2.0 * eps, 1e-3),
            _ => (CROSS_CHECK_STEP, CROSS_CHECK_TOL),
        };
        let (worst, min_g) = self.cross_check(&points, step);
        if !(min_g > 0.0) || !min_g.is_finite() {
            return contract(format!("metric '{}' is not positive definite (min g_ii = {min_g:e})", self.label));
        }
        if !(worst <= tol) {
            return contract(format!("metric '{}' derivatives inconsistent with values ({worst:e})", self.label));
        }
        Ok(self)
    }
}

fn shifted(x: &[f64], k: usize, h: f64) -> Vec4 {
    let mut y = [x[0], x[1], x[2], x[3]];
    y[k] += h;
    y
}

impl DiagonalMetric for MetricField {
    fn dim(&self) -> usize {
        4
    }

    fn log_scales(&self, x: &[f64]) -> Vec4 {
        match &self.kind {
            MetricKind::Flat => [0.0; 4],
            MetricKind::Grid(g) => g.log_scales(x),
            MetricKind::Spheres { r1, r2 } => [r1.ln(), r1.ln() + x[0].sin().ln(), r2.ln(), r2.ln() + x[2].sin().ln()],
            MetricKind::Coefficients { g, .. } => {
                let v = g(x);
                [0.5 * v[0].ln(), 0.5 * v[1].ln(), 0.5 * v[2].ln(), 0.5 * v[3].ln()]
            }
        }
    }

    fn d_log_scales(&self, x: &[f64]) -> Mat4 {
        match &self.kind {
            MetricKind::Flat => [[0.0; 4]; 4],
            MetricKind::Grid(g) => g.d_log_scales(x),
            MetricKind::Spheres { .. } => {
                let mut d = [[0.0; 4]; 4];
                d[0][1] = x[0].cos() / x[0].sin();
                d[2][3] = x[2].cos() / x[2].sin();
                d
            }
            MetricKind::Coefficients { eps, .. } => {
                let mut d = [[0.0; 4]; 4];
                for k in 0..4 {
                    let p = self.log_scales(&shifted(x, k, *eps));
                    let m = self.log_scales(&shifted(x, k, -*eps));
                    for i in 0..4 {
                        d[k][i] = (p[i] - m[i]) / (2.0 * eps);
                    }
                }
                d
            }
        }
    }

    fn dd_log_scales(&self, x: &[f64]) -> Tensor3 {
        match &self.kind {
            MetricKind::Flat => [[[0.0; 4]; 4]; 4],
            MetricKind::Grid(g) => g.dd_log_scales(x),
            MetricKind::Spheres { .. } => {
                let mut dd = [[[0.0; 4]; 4]; 4];
                dd[0][0][1] = -1.0 / x[0].sin().powi(2);
                dd[2][2][3] = -1.0 / x[2].sin().powi(2);
                dd
            }
            MetricKind::Coefficients { eps, .. } => {
                let mut dd = [[[0.0; 4]; 4]; 4];
                for k in 0..4 {
                    let p = self.d_log_scales(&shifted(x, k, *eps));
                    let m = self.d_log_scales(&shifted(x, k, -*eps));
                    for l in 0..4 {
                        for i in 0..4 {
                            dd[k][l][i] = (p[l][i] - m[l][i]) / (2.0 * eps);
                        }
                    }
                }
                dd
            }
        }
    }
}

// ---------------------------------------------------------------- 2-forms

/// Named 2-form test cases. Component arrays are ordered
/// `(12, 13, 14, 23, 24, 34)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormCase {
    /// Constant chart components `h_ij`.
    Constant { components: [f64; 6] },
    /// `base + slope * x_axis` in chart components.
    Affine { base: [f64; 6], slope: [f64; 6], axis: usize },
    /// Constant components in the orthonormal coordinate frame.
    Orthonormal { components: [f64; 6] },
    /// `c1 * area(S^2(r1)) + c2 * area(S^2(r2))`; requires a sphere-product metric.
    ProductAreas { c1: f64, c2: f64 },
}

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn skew_from_upper(c: &[f64; 6]) -> Mat4 {
    let mut h = [[0.0; 4]; 4];
    for (n, &(i, j)) in PAIRS.iter().enumerate() {
        h[i][j] = c[n];
        h[j][i] = -c[n];
    }
    h
}

type Components = Arc<dyn Fn(&[f64]) -> Mat4 + Send + Sync>;

/// A 2-form given by its chart components `h_ij(x)` (antisymmetric matrix).
#[derive(Clone)]
pub struct FormField2 {
    label: String,
    components: Components,
}

impl fmt::Debug for FormField2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FormField2").field("label", &self.label).finish()
    }
}

impl FormField2 {
    /// From upper-triangular components `(12, 13, 14, 23, 24, 34)`.
    pub fn new(label: impl Into<String>, upper: impl Fn(&[f64]) -> [f64; 6] + Send + Sync + 'static) -> Self {
        Self { label: label.into(), components: Arc::new(move |x| skew_from_upper(&upper(x))) }
    }

    /// Constant chart components; the matrix must be antisymmetric.
    pub fn constant(h: Mat4) -> Result<Self> {
        for i in 0..4 {
            for j in 0..4 {
                if (h[i][j] + h[j][i]).abs() > 1e-14 * (1.0 + h[i][j].abs()) {
                    return contract(format!("component matrix not antisymmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { label: "constant".into(), components: Arc::new(move |_| h) })
    }

    /// `c1 r1^2 sin(theta1) dtheta1^dphi1 + c2 r2^2 sin(theta2) dtheta2^dphi2`.
    pub fn product_areas(r1: f64, r2: f64, c1: f64, c2: f64) -> Self {
        Self::new("product-areas", move |x| [c1 * r1 * r1 * x[0].sin(), 0.0, 0.0, 0.0, 0.0, c2 * r2 * r2 * x[2].sin()])
    }

    /// Components constant in the orthonormal coordinate frame of `metric`.
    pub fn orthonormal_constant(metric: &MetricField, components: [f64; 6]) -> Self {
        let metric = metric.clone();
        Self::new("orthonormal-constant", move |x| {
            let phi = metric.log_scales(x);
            let mut c = components;
            for (n, &(i, j)) in PAIRS.iter().enumerate() {
                c[n] *= (phi[i] + phi[j]).exp();
            }
            c
        })
    }

    pub fn from_case(case: &FormCase, metric: &MetricField) -> Result<Self> {
        match case {
            FormCase::Constant { components } => Self::constant(skew_from_upper(components)),
            FormCase::Affine { base, slope, axis } => {
                if *axis >= 4 {
                    return contract(format!("affine axis {axis} out of range"));
                }
                let (base, slope, axis) = (*base, *slope, *axis);
                Ok(Self::new("affine", move |x| {
                    let mut c = base;
                    for n in 0..6 {
                        c[n] += slope[n] * x[axis];
                    }
                    c
                }))
            }
            FormCase::Orthonormal { components } => Ok(Self::orthonormal_constant(metric, *components)),
            FormCase::ProductAreas { c1, c2 } => match metric.sphere_radii() {
                Some((r1, r2)) => Ok(Self::product_areas(r1, r2, *c1, *c2)),
                None => contract("product-area form needs a sphere-product metric"),
            },
        }
    }

    /// Smooth trigonometric interpolant of a pointwise grid field: chart
    /// components `z_ij e^{phi_i + phi_j}` at the cell centers, interpolated
    /// per component.
    pub fn from_field(z: &FormField<f64>) -> Result<Self> {
        let g = z.grid().clone();
        if g.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, found: g.dim() });
        }
        let mut channels = vec![Vec::with_capacity(g.n_vertices()); 6];
        for v in 0..g.n_vertices() {
            let x = g.top_center(v);
            let phi = g.log_scales(&x[..4]);
            let val = z.get(v);
            for (n, &(i, j)) in PAIRS.iter().enumerate() {
                channels[n].push(val.coeff(mask_of(&[i, j])) * (phi[i] + phi[j]).exp());
            }
        }
        let interp = PeriodicInterpolant::new(&g, channels)?;
        Ok(Self::new("interpolated", move |x| {
            let c = interp.eval(x);
            [c[0], c[1], c[2], c[3], c[4], c[5]]
        }))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Chart components `h_ij(x)`.
    pub fn chart(&self, x: &[f64]) -> Mat4 {
        (self.components)(x)
    }

    /// Centered-difference derivative of the chart components along `axis`.
    pub fn derivative(&self, x: &[f64], axis: usize, eps: f64) -> Mat4 {
        let p = self.chart(&shifted(x, axis, eps));
        let m = self.chart(&shifted(x, axis, -eps));
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (p[i][j] - m[i][j]) / (2.0 * eps);
            }
        }
        out
    }

    /// Components `h(v_i, v_j)` in the orthonormal coordinate frame.
    pub fn orthonormal(&self, metric: &dyn DiagonalMetric, x: &[f64]) -> Mat4 {
        let h = self.chart(x);
        let phi = metric.log_scales(x);
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = h[i][j] * (-(phi[i] + phi[j])).exp();
            }
        }
        out
    }
}

/// Separable trigonometric interpolation of cell-center samples on a torus grid.
#[derive(Clone, Debug)]
pub struct PeriodicInterpolant {
    resolution: [usize; 4],
    periods: [f64; 4],
    spacing: [f64; 4],
    coords: Vec<[usize; 4]>,
    channels: Vec<Vec<f64>>,
}

impl PeriodicInterpolant {
    pub fn new(grid: &TorusGrid, channels: Vec<Vec<f64>>) -> Result<Self> {
        if grid.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, found: grid.dim() });
        }
        for c in &channels {
            if c.len() != grid.n_vertices() {
                return Err(Error::DimensionMismatch { expected: grid.n_vertices(), found: c.len() });
            }
        }
        let r = grid.resolution();
        let p = grid.periods();
        let s = grid.spacing();
        let coords = (0..grid.n_vertices())
            .map(|v| {
                let c = grid.vertex_coords(v);
                [c[0], c[1], c[2], c[3]]
            })
            .collect();
        Ok(Self {
            resolution: [r[0], r[1], r[2], r[3]],
            periods: [p[0], p[1], p[2], p[3]],
            spacing: [s[0], s[1], s[2], s[3]],
            coords,
            channels,
        })
    }

    fn weights(&self, axis: usize, x: f64) -> Vec<f64> {
        let n = self.resolution[axis];
        let l = self.periods[axis];
        (0..n)
            .map(|j| {
                let t = (x - (j as f64 + 0.5) * self.spacing[axis]) / l;
                let mut w = 1.0;
                let top = if n % 2 == 0 { n / 2 - 1 } else { (n - 1) / 2 };
                for k in 1..=top {
                    w += 2.0 * (std::f64::consts::TAU * k as f64 * t).cos();
                }
                if n % 2 == 0 {
                    w += (std::f64::consts::PI * n as f64 * t).cos();
                }
                w / n as f64
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let w: Vec<Vec<f64>> = (0..4).map(|a| self.weights(a, x[a])).collect();
        let mut out = vec![0.0; self.channels.len()];
        for (v, c) in self.coords.iter().enumerate() {
            let wt = w[0][c[0]] * w[1][c[1]] * w[2][c[2]] * w[3][c[3]];
            for (o, ch) in out.iter_mut().zip(&self.channels) {
                *o += wt * ch[v];
            }
        }
        out
    }
}

// ---------------------------------------------------------------- frames

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameOptions {
    /// Centered-difference step in chart coordinates.
    pub eps: f64,
    /// Relative eigenvalue gap `(a^2 - b^2) / (a^2 + b^2)` below which a point is masked.
    pub gap: f64,
    /// `|grad f|` below which a point counts as critical.
    pub critical_tol: f64,
    pub newton_max: usize,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { eps: 1e-4, gap: 1e-6, critical_tol: 1e-6, newton_max: 50 }
    }
}

impl FrameOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return contract("eps must be positive");
        }
        if !(self.gap > 0.0 && self.gap < 1.0) {
            return contract("gap must lie in (0, 1)");
        }
        if !(self.critical_tol > 0.0) {
            return contract("critical_tol must be positive");
        }
        Ok(())
    }
}

/// Adapted frame at a point: rows `E[i]`, `h = a w^12 + b w^34`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedFrame {
    pub frame: Mat4,
    pub a: f64,
    pub b: f64,
}

impl AdaptedFrame {
    pub fn f(&self) -> f64 {
        0.5 * (self.a * self.a - self.b * self.b).ln()
    }

    /// Largest deviation of `a w^12 + b w^34` from `h` (orthonormal components).
    pub fn reconstruction_error(&self, h: &Mat4) -> f64 {
        let e = &self.frame;
        let mut worst = 0.0f64;
        for p in 0..4 {
            for q in 0..4 {
                let w12 = e[0][p] * e[1][q] - e[1][p] * e[0][q];
                let w34 = e[2][p] * e[3][q] - e[3][p] * e[2][q];
                worst = worst.max((self.a * w12 + self.b * w34 - h[p][q]).abs());
            }
        }
        worst
    }
}

fn mat_vec(m: &Mat4, v: &Vec4) -> Vec4 {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (0..4).map(|j| m[i][j] * v[j]).sum();
    }
    out
}

fn transpose_vec(m: &Mat4, v: &Vec4) -> Vec4 {
    let mut out = [0.0; 4];
    for j in 0..4 {
        out[j] = (0..4).map(|i| m[i][j] * v[i]).sum();
    }
    out
}

fn norm(v: &Vec4) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &Vec4, b: &Vec4) -> f64 {
    (0..4).map(|i| a[i] * b[i]).sum()
}

fn scaled(v: &Vec4, s: f64) -> Vec4 {
    [v[0] * s, v[1] * s, v[2] * s, v[3] * s]
}

/// The unit vector completing `(u, v, w)` to a positively oriented basis
/// (generalized cross product).
fn complete(u: &Vec4, v: &Vec4, w: &Vec4) -> Vec4 {
    let m = Matrix4::from_rows(&[
        Vector4::from(*u).transpose(),
        Vector4::from(*v).transpose(),
        Vector4::from(*w).transpose(),
        Vector4::zeros().transpose(),
    ]);
    let mut out = [0.0; 4];
    for (l, o) in out.iter_mut().enumerate() {
        let mut e = m;
        e[(3, l)] = 1.0;
        *o = e.determinant();
    }
    let n = norm(&out);
    scaled(&out, 1.0 / n)
}

/// Picks the reference row with the largest projection, or the preferred
/// row when continuing a field.
fn project_reference(p: &Mat4, reference: &Mat4, preferred: usize, continuing: bool) -> Result<Vec4> {
    if continuing {
        let v = mat_vec(p, &reference[preferred]);
        let n = norm(&v);
        if n < ALIGNMENT_FLOOR {
            return Err(Error::Masked(format!("frame discontinuity: reference projection {n:.3}")));
        }
        return Ok(scaled(&v, 1.0 / n));
    }
    let mut best = ([0.0; 4], 0.0);
    for r in 0..4 {
        let v = mat_vec(p, &reference[(preferred + r) % 4]);
        let n = norm(&v);
        if n > best.1 + 1e-12 {
            best = (v, n);
        }
    }
    Ok(scaled(&best.0, 1.0 / best.1))
}

/// Block-diagonalizes the orthonormal component matrix `h` of a 2-form.
/// `reference` rows seed the choice of `e_1` and `e_3`; `continuing` demands
/// that the seeds project well (frame-field continuation).
pub fn adapt_components(h: &Mat4, reference: &Mat4, continuing: bool, gap: f64) -> Result<AdaptedFrame> {
    let hm = Matrix4::from_fn(|i, j| h[i][j]);
    let q = hm * hm.transpose();
    let eig = SymmetricEigen::new(q);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let (a2, b2) = (0.5 * (lam[0] + lam[1]), 0.5 * (lam[2] + lam[3]).max(0.0));
    if !(a2 > 0.0) || !a2.is_finite() {
        return Err(Error::Masked("form vanishes".into()));
    }
    let rel = (a2 - b2) / (a2 + b2);
    if rel < gap {
        return Err(Error::Masked(format!("self-dual or anti-self-dual point (relative gap {rel:e})")));
    }
    let mut pa = [[0.0; 4]; 4];
    for &k in &order[..2] {
        let v = eig.eigenvectors.column(k);
        for i in 0..4 {
            for j in 0..4 {
                pa[i][j] += v[i] * v[j];
            }
        }
    }
    let e1 = project_reference(&pa, reference, 0, continuing)?;
    let w = transpose_vec(h, &e1);
    let a = norm(&w);
    let e2 = scaled(&w, 1.0 / a);
    let mut pb = IDENTITY;
    for i in 0..4 {
        for j in 0..4 {
            pb[i][j] -= e1[i] * e1[j] + e2[i] * e2[j];
        }
    }
    let e3 = project_reference(&pb, reference, 2, continuing)?;
    let e4 = complete(&e1, &e2, &e3);
    let b = dot(&e3, &mat_vec(h, &e4));
    if !(a > b.abs()) {
        return Err(Error::Masked(format!("non-smooth branch: a = {a:e}, |b| = {:e}", b.abs())));
    }
    Ok(AdaptedFrame { frame: [e1, e2, e3, e4], a, b })
}

/// Structure tensors assembled from connection coefficients in an adapted frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureTensors {
    /// `c[i][j][k] = gamma_ij^k - gamma_ji^k`.
    pub structure: Tensor3,
    /// `(c^3_12, c^4_12)`, components along `e_3, e_4`.
    pub torsion_a: [f64; 2],
    /// `(c^1_34, c^2_34)`, components along `e_1, e_2`.
    pub torsion_b: [f64; 2],
    /// `II_a[i][j][m] = (gamma^{m+3}_ij + gamma^{m+3}_ji) / 2`, `i, j` in `{e_1, e_2}`.
    pub second_a: [[[f64; 2]; 2]; 2],
    /// `II_b[i][j][m] = (gamma^{m+1}_ij + gamma^{m+1}_ji) / 2`, `i, j` in `{e_3, e_4}`.
    pub second_b: [[[f64; 2]; 2]; 2],
    /// Trace of `II_a`, components along `e_3, e_4`.
    pub mean_a: [f64; 2],
    /// Trace of `II_b`, components along `e_1, e_2`.
    pub mean_b: [f64; 2],
}

impl StructureTensors {
    pub fn from_connection(gamma: &Tensor3) -> Self {
        let mut c = [[[0.0; 4]; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j][k] = gamma[i][j][k] - gamma[j][i][k];
                }
            }
        }
        let mut second_a = [[[0.0; 2]; 2]; 2];
        let mut second_b = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for m in 0..2 {
                    second_a[i][j][m] = 0.5 * (gamma[i][j][m + 2] + gamma[j][i][m + 2]);
                    second_b[i][j][m] = 0.5 * (gamma[i + 2][j + 2][m] + gamma[j + 2][i + 2][m]);
                }
            }
        }
        let mean_a = [second_a[0][0][0] + second_a[1][1][0], second_a[0][0][1] + second_a[1][1][1]];
        let mean_b = [second_b[0][0][0] + second_b[1][1][0], second_b[0][0][1] + second_b[1][1][1]];
        Self {
            structure: c,
            torsion_a: [c[0][1][2], c[0][1][3]],
            torsion_b: [c[2][3][0], c[2][3][1]],
            second_a,
            second_b,
            mean_a,
            mean_b,
        }
    }

    pub fn torsion_a_sq(&self) -> f64 {
        self.torsion_a.iter().map(|x| x * x).sum()
    }

    pub fn torsion_b_sq(&self) -> f64 {
        self.torsion_b.iter().map(|x| x * x).sum()
    }

    pub fn second_a_sq(&self) -> f64 {
        self.second_a.iter().flatten().flatten().map(|x| x * x).sum()
    }

    pub fn second_b_sq(&self) -> f64 {
        self.second_b.iter().flatten().flatten().map(|x| x * x).sum()
    }

    /// `H_a + H_b` in frame components.
    pub fn mean_total(&self) -> Vec4 {
        [self.mean_b[0], self.mean_b[1], self.mean_a[0], self.mean_a[1]]
    }
}

/// Everything known about the adapted frame at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePacket {
    pub point: Vec4,
    pub frame: AdaptedFrame,
    /// `gamma[i][j][k] = <nabla_{e_i} e_j, e_k>`.
    pub gamma: Tensor3,
    pub tensors: StructureTensors,
    pub f: f64,
    /// `e_i(f)`, `e_i(a)`, `e_i(b)`.
    pub grad_f: Vec4,
    pub grad_a: Vec4,
    pub grad_b: Vec4,
    /// Size of the discarded symmetric part of the differenced frame term.
    pub fd_defect: f64,
}

impl FramePacket {
    pub fn a(&self) -> f64 {
        self.frame.a
    }

    pub fn b(&self) -> f64 {
        self.frame.b
    }

    /// Coframe rows `w^i = sum_k E[i][k] e^{phi_k} dx^k` in chart components.
    pub fn coframe(&self, metric: &dyn DiagonalMetric) -> Mat4 {
        let phi = metric.log_scales(&self.point);
        let mut w = self.frame.frame;
        for row in w.iter_mut() {
            for k in 0..4 {
                row[k] *= phi[k].exp();
            }
        }
        w
    }

    /// Largest violation of `gamma_ij^k = -gamma_ik^j`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    worst = worst.max((self.gamma[i][j][k] + self.gamma[i][k][j]).abs());
                }
            }
        }
        worst
    }

    pub fn invariants(&self) -> FrameInvariants {
        FrameInvariants {
            a: self.frame.a,
            b: self.frame.b,
            f: self.f,
            torsion_a_sq: self.tensors.torsion_a_sq(),
            torsion_b_sq: self.tensors.torsion_b_sq(),
            second_a_sq: self.tensors.second_a_sq(),
            second_b_sq: self.tensors.second_b_sq(),
        }
    }
}

/// Gauge-independent scalars of a packet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInvariants {
    pub a: f64,
    pub b: f64,
    pub f: f64,
    pub torsion_a_sq: f64,
    pub torsion_b_sq: f64,
    pub second_a_sq: f64,
    pub second_b_sq: f64,
}

impl FrameInvariants {
    pub fn max_difference(&self, other: &Self) -> f64 {
        [
            self.a - other.a,
            self.b - other.b,
            self.f - other.f,
            self.torsion_a_sq - other.torsion_a_sq,
            self.torsion_b_sq - other.torsion_b_sq,
            self.second_a_sq - other.second_a_sq,
            self.second_b_sq - other.second_b_sq,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

/// Rotation-angle fields, linear in chart coordinates, turning the frame in
/// the `(e_1, e_2)` and `(e_3, e_4)` planes.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PlaneRotation {
    center: Vec4,
    theta: Vec4,
    psi: Vec4,
}

impl PlaneRotation {
    fn apply(&self, y: &Vec4, e: &Mat4) -> Mat4 {
        let th: f64 = (0..4).map(|m| self.theta[m] * (y[m] - self.center[m])).sum();
        let ps: f64 = (0..4).map(|m| self.psi[m] * (y[m] - self.center[m])).sum();
        let mut out = *e;
        let (c, s) = (th.cos(), th.sin());
        for l in 0..4 {
            out[0][l] = c * e[0][l] + s * e[1][l];
            out[1][l] = -s * e[0][l] + c * e[1][l];
        }
        let (c, s) = (ps.cos(), ps.sin());
        for l in 0..4 {
            out[2][l] = c * e[2][l] + s * e[3][l];
            out[3][l] = -s * e[2][l] + c * e[3][l];
        }
        out
    }
}

/// Frame field near a point: adapted frames aligned to a fixed reference,
/// optionally followed by a plane rotation.
#[derive(Clone, Copy, Debug)]
struct LocalFrame {
    reference: Mat4,
    rotation: Option<PlaneRotation>,
}

/// Sectional curvatures of the coordinate planes of an adapted frame,
/// `K[i][j] = R(e_i, e_j, e_j, e_i)`, computed two ways.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionalComparison {
    /// From connection coefficients and their differences.
    pub from_connection: Mat4,
    /// From the Riemann tensor of the metric.
    pub direct: Mat4,
    pub deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BochnerVariant {
    /// Mixed sectional curvatures, second fundamental forms and torsion; at critical points of `f`.
    Critical,
    /// Scalar curvature, plane curvatures and leaf curvatures; wherever the gap is open.
    Curvature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BochnerTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BochnerReport {
    pub variant: BochnerVariant,
    pub point: Vec4,
    /// `-Delta f = sum_j Hess f(e_j, e_j)`.
    pub lhs: f64,
    pub terms: Vec<BochnerTerm>,
    pub rhs: f64,
    pub residual: f64,
    pub grad_f_norm: f64,
    /// `Hess f(e_j, e_j)` in the frame used for the terms.
    pub hessian_diagonal: Vec4,
}

impl BochnerReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub point: Vec4,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Frame calculus of one form on one metric.
pub struct FrameCalc<'a> {
    metric: &'a dyn DiagonalMetric,
    form: &'a FormField2,
    opts: FrameOptions,
}

impl<'a> FrameCalc<'a> {
    pub fn new(metric: &'a dyn DiagonalMetric, form: &'a FormField2, opts: FrameOptions) -> Result<Self> {
        opts.validate()?;
        if metric.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, found: metric.dim() });
        }
        Ok(Self { metric, form, opts })
    }

    pub fn options(&self) -> &FrameOptions {
        &self.opts
    }

    /// Adapted frame at `x`, seeded by `gauge` (identity when absent).
    pub fn adapt(&self, x: &Vec4, gauge: Option<&Mat4>) -> Result<AdaptedFrame> {
        let h = self.form.orthonormal(self.metric, x);
        adapt_components(&h, gauge.unwrap_or(&IDENTITY), false, self.opts.gap)
    }

    fn frame_at(&self, y: &Vec4, lf: &LocalFrame) -> Result<AdaptedFrame> {
        let h = self.form.orthonormal(self.metric, y);
        let mut fr = adapt_components(&h, &lf.reference, true, self.opts.gap)?;
        if let Some(rot) = &lf.rotation {
            fr.frame = rot.apply(y, &fr.frame);
        }
        Ok(fr)
    }

    fn packet_at(&self, y: &Vec4, lf: &LocalFrame) -> Result<FramePacket> {
        let eps = self.opts.eps;
        let fr = self.frame_at(y, lf)?;
        let e = &fr.frame;
        let phi = self.metric.log_scales(y);
        let gv = frame_connection(self.metric, y);
        let mut de = [[[0.0; 4]; 4]; 4];
        let (mut da, mut db, mut df) = ([0.0; 4], [0.0; 4], [0.0; 4]);
        for m in 0..4 {
            let fp = self.frame_at(&shifted(y, m, eps), lf)?;
            let fm = self.frame_at(&shifted(y, m, -eps), lf)?;
            for j in 0..4 {
                for l in 0..4 {
                    let (p, q) = (fp.frame[j][l], fm.frame[j][l]);
                    if (p - e[j][l]).abs() > CONTINUITY_LIMIT || (q - e[j][l]).abs() > CONTINUITY_LIMIT {
                        return Err(Error::Masked("frame discontinuity between neighbouring points".into()));
                    }
                    de[m][j][l] = (p - q) / (2.0 * eps);
                }
            }
            da[m] = (fp.a - fm.a) / (2.0 * eps);
            db[m] = (fp.b - fm.b) / (2.0 * eps);
            df[m] = (fp.f() - fm.f()) / (2.0 * eps);
        }
        // Directional derivative along e_i of a coordinate-differentiated quantity.
        let along = |i: usize, m: usize| e[i][m] * (-phi[m]).exp();
        // Frame term <e_i(E_j), E_k>: exactly skew in (j, k) for an orthonormal
        // field, so its symmetric part is pure difference error and is dropped.
        let mut rot = [[[0.0; 4]; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    rot[i][j][k] = (0..4).map(|m| along(i, m) * (0..4).map(|l| de[m][j][l] * e[k][l]).sum::<f64>()).sum();
                }
            }
        }
        let mut gamma = [[[0.0; 4]; 4]; 4];
        let mut fd_defect = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    fd_defect = fd_defect.max((rot[i][j][k] + rot[i][k][j]).abs());
                    let mut v = 0.5 * (rot[i][j][k] - rot[i][k][j]);
                    for m in 0..4 {
                        for l in 0..4 {
                            for p in 0..4 {
                                v += e[i][m] * e[j][l] * gv[m][l][p] * e[k][p];
                            }
                        }
                    }
                    gamma[i][j][k] = v;
                }
            }
        }
        let dir = |g: &Vec4| {
            let mut out = [0.0; 4];
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..4).map(|m| along(i, m) * g[m]).sum();
            }
            out
        };
        Ok(FramePacket {
            point: *y,
            frame: fr,
            tensors: StructureTensors::from_connection(&gamma),
            gamma,
            f: fr.f(),
            grad_f: dir(&df),
            grad_a: dir(&da),
            grad_b: dir(&db),
            fd_defect,
        })
    }

    fn local_frame(&self, x: &Vec4, gauge: Option<&Mat4>) -> Result<LocalFrame> {
        let center = self.adapt(x, gauge)?;
        Ok(LocalFrame { reference: center.frame, rotation: None })
    }

    /// Packet in the adapted frame field seeded at `x` by the identity gauge.
    pub fn packet(&self, x: &Vec4) -> Result<FramePacket> {
        self.packet_in_gauge(x, &IDENTITY)
    }

    /// Packet with the initial frame choice seeded by the rows of `gauge`.
    pub fn packet_in_gauge(&self, x: &Vec4, gauge: &Mat4) -> Result<FramePacket> {
        let lf = self.local_frame(x, Some(gauge))?;
        self.packet_at(x, &lf)
    }

    /// Frame field rotated so that `gamma_i1^2 = 0 = gamma_i3^4` at `x`.
    fn point_adapted(&self, x: &Vec4) -> Result<(LocalFrame, FramePacket)> {
        let mut lf = self.local_frame(x, None)?;
        let base = self.packet_at(x, &lf)?;
        let phi = self.metric.log_scales(x);
        let e = &base.frame.frame;
        let (mut theta, mut psi) = ([0.0; 4], [0.0; 4]);
        for m in 0..4 {
            let s = phi[m].exp();
            theta[m] = -s * (0..4).map(|i| e[i][m] * base.gamma[i][0][1]).sum::<f64>();
            psi[m] = -s * (0..4).map(|i| e[i][m] * base.gamma[i][2][3]).sum::<f64>();
        }
        lf.rotation = Some(PlaneRotation { center: *x, theta, psi });
        let packet = self.packet_at(x, &lf)?;
        Ok((lf, packet))
    }

    /// Packet in the point-adapted frame used by the critical-point formula.
    pub fn point_adapted_packet(&self, x: &Vec4) -> Result<FramePacket> {
        Ok(self.point_adapted(x)?.1)
    }

    fn sectional_in(&self, x: &Vec4, lf: &LocalFrame) -> Result<(FramePacket, SectionalComparison)> {
        let eps = self.opts.eps;
        let center = self.packet_at(x, lf)?;
        let e = &center.frame.frame;
        let phi = self.metric.log_scales(x);
        let mut dg = [[[[0.0; 4]; 4]; 4]; 4];
        for m in 0..4 {
            let gp = self.packet_at(&shifted(x, m, eps), lf)?.gamma;
            let gm = self.packet_at(&shifted(x, m, -eps), lf)?.gamma;
            for p in 0..4 {
                let w = e[p][m] * (-phi[m]).exp();
                for i in 0..4 {
                    for j in 0..4 {
                        for k in 0..4 {
                            dg[p][i][j][k] += w * (gp[i][j][k] - gm[i][j][k]) / (2.0 * eps);
                        }
                    }
                }
            }
        }
        let g = &center.gamma;
        let mut from_connection = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let mut v = dg[i][j][j][i] - dg[j][i][j][i];
                for m in 0..4 {
                    v += g[i][m][i] * g[j][j][m] - g[j][m][i] * g[i][j][m] - (g[i][j][m] - g[j][i][m]) * g[m][j][i];
                }
                from_connection[i][j] = v;
            }
        }
        let r = self.frame_riemann(x, e);
        let mut direct = [[0.0; 4]; 4];
        let mut deviation = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    direct[i][j] = r[i][j][j][i];
                    deviation = deviation.max((direct[i][j] - from_connection[i][j]).abs());
                }
            }
        }
        Ok((center, SectionalComparison { from_connection, direct, deviation }))
    }

    /// Sectional curvatures of the adapted frame's coordinate planes, two ways.
    pub fn sectional_curvatures(&self, x: &Vec4) -> Result<SectionalComparison> {
        let lf = self.local_frame(x, None)?;
        Ok(self.sectional_in(x, &lf)?.1)
    }

    /// Riemann tensor `R(e_a, e_b, e_c, e_d)` in the frame `e`.
    pub fn frame_riemann(&self, x: &Vec4, e: &Mat4) -> Tensor4 {
        let r = riemann_frame(self.metric, x);
        let mut t = r;
        // Contract one slot at a time.
        for slot in 0..4 {
            let mut out = [[[[0.0; 4]; 4]; 4]; 4];
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        for d in 0..4 {
                            let idx = [a, b, c, d];
                            let mut v = 0.0;
                            for s in 0..4 {
                                let mut j = idx;
                                j[slot] = s;
                                v += e[idx[slot]][s] * t[j[0]][j[1]][j[2]][j[3]];
                            }
                            out[a][b][c][d] = v;
                        }
                    }
                }
            }
            t = out;
        }
        t
    }

    /// `f = ln sqrt(a^2 - b^2)` at `x`.
    pub fn f_value(&self, x: &Vec4) -> Result<f64> {
        Ok(self.adapt(x, None)?.f())
    }

    /// Chart gradient and Hessian of `f` by centered differences.
    fn f_derivatives(&self, x: &Vec4) -> Result<(Vec4, Mat4)> {
        let eps = self.opts.eps;
        let f0 = self.f_value(x)?;
        let mut grad = [0.0; 4];
        let mut hess = [[0.0; 4]; 4];
        for a in 0..4 {
            let fp = self.f_value(&shifted(x, a, eps))?;
            let fm = self.f_value(&shifted(x, a, -eps))?;
            grad[a] = above_roundoff(fp - fm, fp.abs() + fm.abs()) / (2.0 * eps);
            hess[a][a] = above_roundoff(fp - 2.0 * f0 + fm, fp.abs() + 2.0 * f0.abs() + fm.abs()) / (eps * eps);
            for b in a + 1..4 {
                let s = |sa: f64, sb: f64| self.f_value(&shifted(&shifted(x, a, sa * eps), b, sb * eps));
                let q = [s(1.0, 1.0)?, s(1.0, -1.0)?, s(-1.0, 1.0)?, s(-1.0, -1.0)?];
                let scale: f64 = q.iter().map(|v| v.abs()).sum();
                let v = above_roundoff(q[0] - q[1] - q[2] + q[3], scale) / (4.0 * eps * eps);
                hess[a][b] = v;
                hess[b][a] = v;
            }
        }
        Ok((grad, hess))
    }

    /// Covariant Hessian of `f` in chart components, and the chart gradient.
    fn covariant_hessian(&self, x: &Vec4) -> Result<(Vec4, Mat4)> {
        let (grad, mut hess) = self.f_derivatives(x)?;
        let gam = christoffel(self.metric, x);
        for a in 0..4 {
            for b in 0..4 {
                hess[a][b] -= (0..4).map(|c| gam[c][a][b] * grad[c]).sum::<f64>();
            }
        }
        Ok((grad, hess))
    }

    fn grad_norm(&self, x: &Vec4, grad: &Vec4) -> f64 {
        let g = self.metric.metric_diag(x);
        (0..4).map(|a| grad[a] * grad[a] / g[a]).sum::<f64>().sqrt()
    }

    /// Damped Newton iteration on `grad f` starting at `x0`.
    pub fn find_critical_point(&self, x0: &Vec4) -> Result<CriticalPoint> {
        let mut x = *x0;
        let (mut grad, mut hess) = self.f_derivatives(&x)?;
        let mut gn = self.grad_norm(&x, &grad);
        let mut iterations = 0;
        while iterations < self.opts.newton_max && gn >= 0.01 * self.opts.critical_tol {
            iterations += 1;
            let hm = nalgebra::Matrix4::from_fn(|i, j| hess[i][j]);
            let svd = hm.svd(true, true);
            let smax = svd.singular_values.max();
            let step = svd
                .solve(&Vector4::from(grad), 1e-8 * smax.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Contract(format!("critical point search: {e}")))?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let y = [x[0] - t * step[0], x[1] - t * step[1], x[2] - t * step[2], x[3] - t * step[3]];
                let (g2, h2) = self.f_derivatives(&y)?;
                let n2 = self.grad_norm(&y, &g2);
                if n2 < gn {
                    x = y;
                    grad = g2;
                    hess = h2;
                    gn = n2;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(CriticalPoint { point: x, grad_norm: gn, iterations })
    }

    /// Residual of the indefinite Bochner formula at `x`.
    pub fn bochner_residual(&self, x: &Vec4, variant: BochnerVariant) -> Result<BochnerReport> {
        let (grad, hess) = self.covariant_hessian(x)?;
        let grad_f_norm = self.grad_norm(x, &grad);
        let phi = self.metric.log_scales(x);
        let lhs: f64 = (0..4).map(|a| hess[a][a] * (-2.0 * phi[a]).exp()).sum();
        let (packet, k) = match variant {
            BochnerVariant::Critical => {
                if grad_f_norm >= self.opts.critical_tol {
                    return Err(Error::Masked(format!("not a critical point of f (|grad f| = {grad_f_norm:e})")));
                }
                let (lf, _) = self.point_adapted(x)?;
                self.sectional_in(x, &lf)?
            }
            BochnerVariant::Curvature => {
                let lf = self.local_frame(x, None)?;
                self.sectional_in(x, &lf)?
            }
        };
        let e = &packet.frame.frame;
        let mut hessian_diagonal = [0.0; 4];
        for (j, hd) in hessian_diagonal.iter_mut().enumerate() {
            for a in 0..4 {
                for b in 0..4 {
                    *hd += e[j][a] * e[j][b] * (-(phi[a] + phi[b])).exp() * hess[a][b];
                }
            }
        }
        let t = &packet.tensors;
        let torsion = -0.5 * (t.torsion_a_sq() + t.torsion_b_sq());
        let kd = &k.direct;
        let term = |name: &str, value: f64| BochnerTerm { name: name.to_string(), value };
        let terms = match variant {
            BochnerVariant::Critical => vec![
                term("sectional_13", kd[0][2]),
                term("sectional_23", kd[1][2]),
                term("sectional_14", kd[0][3]),
                term("sectional_24", kd[1][3]),
                term("second_fundamental", t.second_a_sq() + t.second_b_sq()),
                term("torsion", torsion),
            ],
            BochnerVariant::Curvature => {
                let kappa: f64 = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).map(|(i, j)| kd[i][j]).sum();
                vec![
                    term("scalar", kappa),
                    term("sectional_12", kd[0][1]),
                    term("sectional_34", kd[2][3]),
                    term("leaf_a", -2.0 * leaf_curvature(kd[0][1], &t.second_a)),
                    term("leaf_b", -2.0 * leaf_curvature(kd[2][3], &t.second_b)),
                    term("torsion", torsion),
                ]
            }
        };
        let rhs: f64 = terms.iter().map(|t| t.value).sum();
        Ok(BochnerReport { variant, point: *x, lhs, rhs, residual: lhs - rhs, terms, grad_f_norm, hessian_diagonal })
    }

    /// The eight first-order equations equivalent to `dh = 0` (first four)
    /// and `d*h = 0` (last four), evaluated in the adapted frame.
    pub fn harmonic_frame_residuals(&self, x: &Vec4) -> Result<[f64; 8]> {
        Ok(frame_equations(&self.packet(x)?))
    }
}

/// Leaf curvature from the Gauss equation:
/// `K_plane + <II(e,e), II(e',e')> - |II(e,e')|^2`.
pub fn leaf_curvature(plane: f64, second: &[[[f64; 2]; 2]; 2]) -> f64 {
    let mut v = plane;
    for m in 0..2 {
        v += second[0][0][m] * second[1][1][m] - second[0][1][m] * second[0][1][m];
    }
    v
}

/// Residuals of the eight frame equations for a packet.
pub fn frame_equations(p: &FramePacket) -> [f64; 8] {
    let (a, b) = (p.frame.a, p.frame.b);
    let (da, db) = (&p.grad_a, &p.grad_b);
    let t = &p.tensors;
    let (ha, hb, ta, tb) = (t.mean_a, t.mean_b, t.torsion_a, t.torsion_b);
    [
        da[2] - a * ha[0] + b * ta[1],
        da[3] - a * ha[1] - b * ta[0],
        db[0] - b * hb[0] + a * tb[1],
        db[1] - b * hb[1] - a * tb[0],
        da[0] - a * hb[0] + b * tb[1],
        da[1] - a * hb[1] - b * tb[0],
        db[2] - b * ha[0] + a * ta[1],
        db[3] - b * ha[1] - a * ta[0],
    ]
}

/// Convenience: packet of `h` on `g` at `x` with default options.
pub fn adapt_frame(metric: &dyn DiagonalMetric, form: &FormField2, x: &Vec4) -> Result<FramePacket> {
    FrameCalc::new(metric, form, FrameOptions::default())?.packet(x)
}

/// Self-dual and anti-self-dual norms, `|h_+|^2` and `|h_-|^2`, of
/// orthonormal components (with `|w^12| = 1`).
pub fn duality_norms(h: &Mat4) -> (f64, f64) {
    let p = [h[0][1] + h[2][3], h[0][2] - h[1][3], h[0][3] + h[1][2]];
    let m = [h[0][1] - h[2][3], h[0][2] + h[1][3], h[0][3] - h[1][2]];
    let sq = |v: [f64; 3]| 0.5 * v.iter().map(|x| x * x).sum::<f64>();
    (sq(p), sq(m))
}

// ---------------------------------------------------------------- heuristics

/// Summary of a sampled residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorm {
    pub max: f64,
    pub rms: f64,
}

impl ResidualNorm {
    fn from_samples(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        Self {
            max: v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            rms: (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicOptions {
    /// Sample every `stride`-th cell center along each axis.
    pub stride: usize,
    /// Points with `a` below `threshold * max a` are masked.
    pub threshold: f64,
    pub frame: FrameOptions,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        Self { stride: 1, threshold: 1e-3, frame: FrameOptions { eps: 1e-4, ..FrameOptions::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicReport {
    pub evaluated: usize,
    pub masked: usize,
    /// `(c^1_34, c^2_34)`: integrability of `{e_3, e_4}`.
    pub integrability: ResidualNorm,
    /// `grad ln a - H_a - H_b`.
    pub mean_curvature_flow: ResidualNorm,
    /// `(c^3_12 - e_4(mu), c^4_12 + e_3(mu))`.
    pub multiplier_torsion: ResidualNorm,
    /// `a T(mu)`.
    pub hamiltonian: ResidualNorm,
    /// `div(a T)`, the density of `d i_{aT} dvol`.
    pub volume: ResidualNorm,
}

/// Structure diagnostics for a constrained critical point `z` with
/// multiplier `mu` (one value per cell). Diagnostic only.
pub fn heuristic_structure_diagnostics(z: &FormField<f64>, mu: &[f64], opts: &HeuristicOptions) -> Result<HeuristicReport> {
    let grid = z.grid().clone();
    if mu.len() != grid.n_vertices() {
        return Err(Error::DimensionMismatch { expected: grid.n_vertices(), found: mu.len() });
    }
    if opts.stride == 0 {
        return contract("stride must be positive");
    }
    let metric = MetricField::from_grid(&grid)?;
    let form = FormField2::from_field(z)?;
    let mu_field = PeriodicInterpolant::new(&grid, vec![mu.to_vec()])?;
    let calc = FrameCalc::new(&metric, &form, opts.frame.clone())?;
    let eps = opts.frame.eps;
    let amax = z.values().iter().map(|v| v.norm_sq().sqrt()).fold(0.0f64, f64::max);

    let mut integrability = Vec::new();
    let mut flow = Vec::new();
    let mut mult = Vec::new();
    let mut ham = Vec::new();
    let mut vol = Vec::new();
    let (mut evaluated, mut masked) = (0, 0);
    for v in 0..grid.n_vertices() {
        let c = grid.vertex_coords(v);
        if (0..4).any(|k| c[k] % opts.stride != 0) {
            continue;
        }
        let xc = grid.top_center(v);
        let x = [xc[0], xc[1], xc[2], xc[3]];
        if z.get(v).norm_sq().sqrt() <= opts.threshold * amax {
            masked += 1;
            continue;
        }
        let lf = match calc.local_frame(&x, None) {
            Ok(lf) => lf,
            Err(Error::Masked(_)) => {
                masked += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let packet = match calc.packet_at(&x, &lf) {
            Ok(p) => p,
            Err(Error::Masked(_)) => {
                masked += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let phi = metric.log_scales(&x);
        let e = &packet.frame.frame;
        let a = packet.frame.a;
        let t = &packet.tensors;
        let h = t.mean_total();
        let dev: Vec4 = std::array::from_fn(|i| packet.grad_a[i] / a - h[i]);

        let mut dmu = [0.0; 4];
        for (m, d) in dmu.iter_mut().enumerate() {
            *d = (mu_field.eval(&shifted(&x, m, eps))[0] - mu_field.eval(&shifted(&x, m, -eps))[0]) / (2.0 * eps);
        }
        let emu: Vec4 = std::array::from_fn(|i| (0..4).map(|m| e[i][m] * (-phi[m]).exp() * dmu[m]).sum());

        // div(aT) = (1 / sqrt g) d_m (sqrt g Y^m), Y the chart components of aT.
        let chart_field = |p: &FramePacket| -> Vec4 {
            let ph = metric.log_scales(&p.point);
            let fe = &p.frame.frame;
            let ta = p.tensors.torsion_a;
            std::array::from_fn(|m| p.frame.a * (ta[0] * fe[2][m] + ta[1] * fe[3][m]) * (-ph[m]).exp())
        };
        let mut div = 0.0;
        let mut ok = true;
        for m in 0..4 {
            let (xp, xm) = (shifted(&x, m, eps), shifted(&x, m, -eps));
            match (calc.packet_at(&xp, &lf), calc.packet_at(&xm, &lf)) {
                (Ok(pp), Ok(pm)) => {
                    let yp = chart_field(&pp)[m] * metric.volume_density(&xp);
                    let ym = chart_field(&pm)[m] * metric.volume_density(&xm);
                    div += (yp - ym) / (2.0 * eps);
                }
                _ => ok = false,
            }
        }
        if !ok {
            masked += 1;
            continue;
        }
        integrability.push(t.torsion_b[0].hypot(t.torsion_b[1]));
        flow.push(norm(&dev));
        mult.push((t.torsion_a[0] - emu[3]).hypot(t.torsion_a[1] + emu[2]));
        ham.push(a * (t.torsion_a[0] * emu[2] + t.torsion_a[1] * emu[3]));
        vol.push(div / metric.volume_density(&x));
        evaluated += 1;
    }
    Ok(HeuristicReport {
        evaluated,
        masked,
        integrability: ResidualNorm::from_samples(&integrability),
        mean_curvature_flow: ResidualNorm::from_samples(&flow),
        multiplier_torsion: ResidualNorm::from_samples(&mult),
        hamiltonian: ResidualNorm::from_samples(&ham),
        volume: ResidualNorm::from_samples(&vol),
    })
}

/// A stencil combination at the rounding level of its inputs is noise; dividing
/// it by `eps^2` would turn a few ulps of a constant into a spurious derivative.
fn above_roundoff(diff: f64, scale: f64) -> f64 {
    if diff.abs() <= 64.0 * f64::EPSILON * scale {
        0.0
    } else {
        diff
    }
}

#[cfg(test)]
mod tests;
