//! Optimality diagnostics for constrained minimizers: diffeomorphism
//! variations, multiplier recovery, the formal tangent space and the
//! adapted-frame equations.

use std::sync::Arc;

use nalgebra::{Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{wedge_top_gradient, QuadraticConstraintSet};
use crate::error::{contract, Error, Result};
use crate::exterior::{mask_of, MultiVector};
use crate::geometry::{frame_connection, DiagonalMetric, Mat4, Tensor4};
use crate::grid::{to_pointwise, to_pointwise_transpose, Cochain, FormField, TorusGrid, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorFieldKind {
    GridSamples,
    GradientOfScalar,
    CoordinateTranslation,
}

/// A vector field on the top-cell centers together with its covariant
/// derivative.
#[derive(Clone, Debug)]
pub struct VectorFieldSpec {
    kind: VectorFieldKind,
    field: VectorField,
    potential: Option<Vec<f64>>,
    /// `nabla[v][m][j] = X^j_{;m}`.
    nabla: Vec<Mat4>,
}

impl VectorFieldSpec {
    pub fn samples(field: VectorField) -> Self {
        Self::build(VectorFieldKind::GridSamples, field, None)
    }

    /// `X = grad f` from samples of `f` at the top-cell centers.
    pub fn gradient(grid: &Arc<TorusGrid>, potential: Vec<f64>) -> Result<Self> {
        if potential.len() != grid.n_vertices() {
            return Err(Error::DimensionMismatch { expected: grid.n_vertices(), found: potential.len() });
        }
        let n = grid.dim();
        let h = grid.spacing();
        let values = (0..grid.n_vertices())
            .map(|v| {
                let phi = grid.log_scales(&grid.top_center(v));
                let mut x = [0.0; 4];
                for (i, xi) in x.iter_mut().enumerate().take(n) {
                    let df = (potential[grid.shift_plus(v, i)] - potential[grid.shift_minus(v, i)]) / (2.0 * h[i]);
                    *xi = (-phi[i]).exp() * df;
                }
                x
            })
            .collect();
        let field = VectorField::new(grid, values)?;
        Ok(Self::build(VectorFieldKind::GradientOfScalar, field, Some(potential)))
    }

    pub fn gradient_of(grid: &Arc<TorusGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = grid.dim();
        let p = (0..grid.n_vertices()).map(|v| f(&grid.top_center(v)[..n])).collect();
        Self::gradient(grid, p)
    }

    /// Constant coordinate field `sum_i c^i d/dx^i`.
    pub fn translation(grid: &Arc<TorusGrid>, direction: &[f64]) -> Result<Self> {
        let n = grid.dim();
        if direction.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: direction.len() });
        }
        let field = VectorField::from_fn(grid, |x| {
            let phi = grid.log_scales(x);
            let mut out = [0.0; 4];
            for i in 0..n {
                out[i] = phi[i].exp() * direction[i];
            }
            out
        });
        Ok(Self::build(VectorFieldKind::CoordinateTranslation, field, None))
    }

    fn build(kind: VectorFieldKind, field: VectorField, potential: Option<Vec<f64>>) -> Self {
        let nabla = field.covariant_derivative();
        Self { kind, field, potential, nabla }
    }

    pub fn kind(&self) -> VectorFieldKind {
        self.kind
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.field.grid()
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }

    pub fn nabla(&self) -> &[Mat4] {
        &self.nabla
    }

    /// `out[j][m] = X^j_{;m}`.
    pub fn gradient_matrix(&self, v: usize) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for m in 0..4 {
            for j in 0..4 {
                out[j][m] = self.nabla[v][m][j];
            }
        }
        out
    }

    /// Symmetric part `B` of `grad X`.
    pub fn symmetric(&self, v: usize) -> Mat4 {
        let g = self.gradient_matrix(v);
        let mut out = [[0.0; 4]; 4];
        for j in 0..4 {
            for m in 0..4 {
                out[j][m] = 0.5 * (g[j][m] + g[m][j]);
            }
        }
        out
    }

    /// Skew part `A` of `grad X`.
    pub fn skew(&self, v: usize) -> Mat4 {
        let g = self.gradient_matrix(v);
        let mut out = [[0.0; 4]; 4];
        for j in 0..4 {
            for m in 0..4 {
                out[j][m] = 0.5 * (g[j][m] - g[m][j]);
            }
        }
        out
    }

    pub fn divergence(&self, v: usize) -> f64 {
        (0..4).map(|i| self.nabla[v][i][i]).sum()
    }

    /// `max|X| + max|grad X|` over the grid.
    pub fn c1_norm(&self) -> f64 {
        let sup = |f: &dyn Fn(usize) -> f64| (0..self.nabla.len()).map(f).fold(0.0f64, f64::max);
        let x = sup(&|v| self.field.values()[v].iter().map(|c| c * c).sum::<f64>().sqrt());
        let dx = sup(&|v| self.nabla[v].iter().flatten().map(|c| c * c).sum::<f64>().sqrt());
        x + dx
    }
}

/// `c(w^j) c-hat(w^m) z`.
fn cc(z: &MultiVector<f64>, j: usize, m: usize) -> MultiVector<f64> {
    z.clifford_hat_basis(m).clifford_basis(j)
}

/// `sum_{j,m} s[j][m] c(w^j) c-hat(w^m) z`.
fn clifford_apply(s: &Mat4, z: &MultiVector<f64>, n: usize) -> MultiVector<f64> {
    let mut out = MultiVector::zero(n);
    for j in 0..n {
        for m in 0..n {
            if s[j][m] != 0.0 {
                out = out.add(&cc(z, j, m).scale(s[j][m]));
            }
        }
    }
    out
}

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|l| a[i][l] * b[l][j]).sum();
        }
    }
    out
}

fn check_same(z: &FormField<f64>, x: &VectorFieldSpec) -> Result<()> {
    if !(Arc::ptr_eq(z.grid(), x.grid()) || **z.grid() == **x.grid()) {
        return Err(Error::GridMismatch("form and vector field live on different grids".into()));
    }
    Ok(())
}

/// Curvature in the orthonormal frame, `r[a][b][c][d] = <R(v_a, v_b) v_c, v_d>`.
pub type CurvatureFn<'a> = &'a dyn Fn(&[f64]) -> Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstVariation {
    /// `<z, (X^j_{;m} + X^m_{;j}) c(w^j) c-hat(w^m) z>`.
    pub clifford: f64,
    /// `<z, (-div(X)/2 + X^i_{;j} e(w^j) i(v_i)) z>` with the divergence term
    /// moved onto `|z|^2`. Equals `clifford / 4` in the continuum.
    pub price: f64,
}

/// First variation of the energy along the flow of `x`.
pub fn first_variation(z: &FormField<f64>, x: &VectorFieldSpec) -> Result<FirstVariation> {
    check_same(z, x)?;
    let g = z.grid();
    let n = g.dim();
    let vol = g.measures(n);
    let h = g.spacing();
    let sq: Vec<f64> = z.values().iter().map(|w| w.norm_sq()).collect();
    let mut clifford = 0.0;
    let mut price = 0.0;
    for v in 0..g.n_vertices() {
        let zv = z.get(v);
        let b = x.symmetric(v);
        let two_b = b.map(|row| row.map(|c| 2.0 * c));
        clifford += vol[v] * zv.dot(&clifford_apply(&two_b, zv, n));
        let phi = g.log_scales(&g.top_center(v));
        let xv = &x.field().values()[v];
        let mut transport = 0.0;
        for m in 0..n {
            let d = (sq[g.shift_plus(v, m)] - sq[g.shift_minus(v, m)]) / (2.0 * h[m]);
            transport += xv[m] * (-phi[m]).exp() * d;
        }
        let grad = x.gradient_matrix(v);
        let mut quad = 0.0;
        for i in 0..n {
            let ii = zv.int_basis(i);
            for j in 0..n {
                if grad[i][j] != 0.0 {
                    quad += grad[i][j] * ii.dot(&zv.int_basis(j));
                }
            }
        }
        price += vol[v] * (0.5 * transport + quad);
    }
    Ok(FirstVariation { clifford, price })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariationBreakdown {
    /// `<z, -X^k B^j_{m;k} c(w^j) c-hat(w^m) z>`.
    pub transport: f64,
    /// `<z, (B^i_m c(w^i) c-hat(w^m))^2 z>`.
    pub quadratic: f64,
    pub a_squared: f64,
    pub b_squared: f64,
    /// `<z, R(X, v_m, v_j, X) c(w^j) c-hat(w^m) z>`.
    pub curvature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub first_variation: f64,
    pub first_variation_price: f64,
    pub second_variation_v1: f64,
    pub second_variation_v2: f64,
    pub breakdown: VariationBreakdown,
}

fn curvature_matrix(r: &Tensor4, x: &[f64; 4], n: usize) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for j in 0..n {
        for m in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += x[a] * x[b] * r[a][m][j][b];
                }
            }
            out[j][m] = s;
        }
    }
    out
}

fn resolve_curvature<'a>(g: &TorusGrid, curvature: Option<CurvatureFn<'a>>) -> Result<Option<CurvatureFn<'a>>> {
    if curvature.is_none() && !g.metric().is_flat() {
        return contract("a curvature callback is required on curved grids");
    }
    Ok(curvature)
}

/// `(nabla_X B)_{jm}` at every point.
fn transported_symmetric(x: &VectorFieldSpec) -> Vec<Mat4> {
    let g = x.grid();
    let n = g.dim();
    let h = g.spacing();
    let b: Vec<Mat4> = (0..g.n_vertices()).map(|v| x.symmetric(v)).collect();
    (0..g.n_vertices())
        .map(|v| {
            let c = g.top_center(v);
            let phi = g.log_scales(&c);
            let gam = frame_connection(g.as_ref(), &c);
            let xv = &x.field().values()[v];
            let mut out = [[0.0; 4]; 4];
            for j in 0..n {
                for m in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        let d = (b[g.shift_plus(v, k)][j][m] - b[g.shift_minus(v, k)][j][m]) / (2.0 * h[k]);
                        s += xv[k] * (-phi[k]).exp() * d;
                        for l in 0..n {
                            s -= xv[k] * (gam[k][j][l] * b[v][l][m] + gam[k][m][l] * b[v][j][l]);
                        }
                    }
                    out[j][m] = s;
                }
            }
            out
        })
        .collect()
}

/// Both second variation forms with a per-term breakdown. The curvature
/// callback may be omitted only on flat grids.
pub fn variation_report(z: &FormField<f64>, x: &VectorFieldSpec, curvature: Option<CurvatureFn<'_>>) -> Result<VariationReport> {
    check_same(z, x)?;
    let g = z.grid();
    let curvature = resolve_curvature(g, curvature)?;
    let first = first_variation(z, x)?;
    let n = g.dim();
    let vol = g.measures(n);
    let nb = transported_symmetric(x);
    let mut t = VariationBreakdown::default();
    for v in 0..g.n_vertices() {
        let zv = z.get(v);
        let a = x.skew(v);
        let b = x.symmetric(v);
        let w = vol[v];
        t.transport -= w * zv.dot(&clifford_apply(&nb[v], zv, n));
        let bz = clifford_apply(&b, zv, n);
        t.quadratic += w * zv.dot(&clifford_apply(&b, &bz, n));
        t.a_squared += w * zv.dot(&clifford_apply(&matmul(&a, &a), zv, n));
        t.b_squared += w * zv.dot(&clifford_apply(&matmul(&b, &b), zv, n));
        if let Some(r) = curvature {
            let rx = curvature_matrix(&r(&g.top_center(v)[..n]), &x.field().values()[v], n);
            t.curvature += w * zv.dot(&clifford_apply(&rx, zv, n));
        }
    }
    Ok(VariationReport {
        first_variation: first.clifford,
        first_variation_price: first.price,
        second_variation_v1: t.transport + t.quadratic,
        second_variation_v2: t.a_squared + t.b_squared + t.curvature + t.quadratic,
        breakdown: t,
    })
}

/// `int sum_j (|nabla_j X|^2 - R(X, v_j, v_j, X)) (2 |i_{v_j} z|^2 - |z|^2)`,
/// which vanishes for Killing fields.
pub fn killing_identity(z: &FormField<f64>, x: &VectorFieldSpec, curvature: Option<CurvatureFn<'_>>) -> Result<f64> {
    check_same(z, x)?;
    let g = z.grid();
    let curvature = resolve_curvature(g, curvature)?;
    let n = g.dim();
    let vol = g.measures(n);
    let mut total = 0.0;
    for v in 0..g.n_vertices() {
        let zv = z.get(v);
        let zz = zv.norm_sq();
        let r = curvature.map(|r| curvature_matrix(&r(&g.top_center(v)[..n]), &x.field().values()[v], n));
        for j in 0..n {
            let grad: f64 = x.nabla()[v][j].iter().map(|c| c * c).sum();
            let ric = r.map_or(0.0, |r| r[j][j]);
            total += vol[v] * (grad - ric) * (2.0 * zv.int_basis(j).norm_sq() - zz);
        }
    }
    Ok(total)
}

/// Lagrange multiplier recovered from `d(*z - mu z) = 0` in weak form.
#[derive(Clone, Debug)]
pub struct MultiplierFit {
    /// Values at the top-cell centers.
    pub mu: Vec<f64>,
    /// `|d*(z) - d*(mu z)| / |d* z|`, or the absolute residual when `d* z = 0`.
    pub relative_residual: f64,
    pub codifferential_norm: f64,
    /// Points where `z` vanishes; `mu` is fixed to 0 there.
    pub null_points: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Points with `|z|^2 <= null_threshold * max |z|^2` are treated as zero.
    pub null_threshold: f64,
}

impl Default for MultiplierOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iterations: 20_000, null_threshold: 1e-12 }
    }
}

struct MultiplierOperator {
    grid: Arc<TorusGrid>,
    /// Gradient of `b -> top(z ^ b)` at each point, times the cell measure.
    kernel: Vec<MultiVector<f64>>,
    inv_w1: Vec<f64>,
}

impl MultiplierOperator {
    fn new(z: &Cochain<f64>) -> Self {
        let g = z.grid().clone();
        let vol = g.measures(g.dim());
        let f = to_pointwise(z);
        let kernel = f.values().iter().zip(vol).map(|(zv, w)| wedge_top_gradient(zv, 2).scale(*w)).collect();
        let inv_w1 = g.star_weights(1).iter().map(|w| 1.0 / w).collect();
        Self { grid: g, kernel, inv_w1 }
    }

    /// `d^T` of the 2-cochain dual to `v -> sum vol mu top(z ^ v)`.
    fn apply(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let vals = self.kernel.iter().zip(mu).map(|(k, m)| k.scale(*m)).collect();
        let c = to_pointwise_transpose(&FormField::new(&self.grid, vals)?, 2)?;
        self.grid.coboundary_transpose_values(1, c.values())
    }

    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        let c = Cochain::from_values(&self.grid, 1, r.to_vec())?.d()?;
        let f = to_pointwise(&c);
        Ok(self.kernel.iter().zip(f.values()).map(|(k, x)| k.dot(x)).collect())
    }

    fn norm_sq(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.inv_w1).map(|(x, w)| x * x * w).sum()
    }
}

/// Least-squares multiplier for a 2-form in dimension 4, via conjugate
/// gradients on the normal equations.
pub fn recover_multiplier(z: &Cochain<f64>, opts: &MultiplierOptions) -> Result<MultiplierFit> {
    let g = z.grid().clone();
    if g.dim() != 4 || z.degree() != 2 {
        return contract("multiplier recovery needs a 2-form in dimension 4");
    }
    let op = MultiplierOperator::new(z);
    let f = to_pointwise(z);
    let zmax = f.values().iter().map(|v| v.norm_sq()).fold(0.0, f64::max);
    let live: Vec<bool> = f.values().iter().map(|v| v.norm_sq() > opts.null_threshold * zmax && zmax > 0.0).collect();
    let null_points = live.iter().filter(|l| !**l).count();
    let w = g.star_weights(2);
    let wz: Vec<f64> = z.values().iter().zip(w).map(|(a, b)| a * b).collect();
    let b = g.coboundary_transpose_values(1, &wz)?;
    let bn = op.norm_sq(&b).sqrt();
    let nv = g.n_vertices();
    let mut mu = vec![0.0; nv];
    let mask = |x: &mut Vec<f64>| {
        x.iter_mut().zip(&live).for_each(|(x, l)| {
            if !l {
                *x = 0.0
            }
        })
    };
    let weighted = |r: &[f64]| r.iter().zip(&op.inv_w1).map(|(x, w)| x * w).collect::<Vec<f64>>();
    // Normal equations L^T D L mu = L^T D b.
    let mut rhs = op.adjoint(&weighted(&b))?;
    mask(&mut rhs);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let rhs_norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rr: f64 = r.iter().map(|x| x * x).sum();
    let mut it = 0;
    while rhs_norm > 0.0 && rr.sqrt() > opts.tolerance * rhs_norm && it < opts.max_iterations {
        let lp = op.apply(&p)?;
        let mut ap = op.adjoint(&weighted(&lp))?;
        mask(&mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..nv {
            mu[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..nv {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
    }
    let lm = op.apply(&mu)?;
    let res: Vec<f64> = b.iter().zip(&lm).map(|(a, c)| a - c).collect();
    let rn = op.norm_sq(&res).sqrt();
    Ok(MultiplierFit {
        mu,
        relative_residual: if bn > 0.0 { rn / bn } else { rn },
        codifferential_norm: bn,
        null_points,
        iterations: it,
    })
}

/// L2 distance between two multiplier fields after removing the mean and
/// normalizing, with the sign of the second aligned to the first.
pub fn multiplier_agreement(grid: &TorusGrid, a: &[f64], b: &[f64]) -> f64 {
    let vol = grid.measures(grid.dim());
    let total: f64 = vol.iter().sum();
    let normalize = |x: &[f64]| -> Vec<f64> {
        let mean = x.iter().zip(vol).map(|(a, w)| a * w).sum::<f64>() / total;
        let c: Vec<f64> = x.iter().map(|a| a - mean).collect();
        let n = c.iter().zip(vol).map(|(a, w)| a * a * w).sum::<f64>().sqrt();
        c.iter().map(|a| if n > 0.0 { a / n } else { 0.0 }).collect()
    };
    let (a, mut b) = (normalize(a), normalize(b));
    let dot: f64 = a.iter().zip(&b).zip(vol).map(|((x, y), w)| x * y * w).sum();
    if dot < 0.0 {
        b.iter_mut().for_each(|x| *x = -*x);
    }
    a.iter().zip(&b).zip(vol).map(|((x, y), w)| (x - y).powi(2) * w).sum::<f64>().sqrt()
}

/// Strong-form residual `|d(*z - mu z)| / |d *z|` of a 2-form in dimension 4,
/// with both fields sampled at the top-cell centers and `d` taken by centered
/// differences. Independent of the weak form used by [`recover_multiplier`],
/// so it measures discretization error rather than solver tolerance.
pub fn pointwise_multiplier_residual(z: &Cochain<f64>, mu: &[f64]) -> Result<f64> {
    let g = z.grid();
    if g.dim() != 4 || z.degree() != 2 {
        return contract("the multiplier residual needs a 2-form in dimension 4");
    }
    if mu.len() != g.n_vertices() {
        return Err(Error::DimensionMismatch { expected: g.n_vertices(), found: mu.len() });
    }
    let f = to_pointwise(z);
    let star = f.map(|_, w| w.star_euclidean());
    let w = star.map(|v, s| s.sub(&f.get(v).scale(mu[v])));
    let num = w.exterior_derivative().l2_norm();
    let den = star.exterior_derivative().l2_norm();
    Ok(if den > 0.0 { num / den } else { num })
}

/// Weak Euler-Lagrange residual against smooth test potentials
/// `v = s(2 pi k.x / L) dx^a` with `dv` evaluated exactly at the cell centers:
/// the largest `|<z, dv> - <mu, top(z ^ dv)>| / (|z| |dv|)` over every axis
/// `a`, every wave vector `k` in `{-1, 0, 1}^n` supported on `axes`, and
/// `s` in `{sin, cos}`. The discrete equation holds only against discrete
/// potentials, so this is its consistency error with the smooth equation.
pub fn smooth_multiplier_residual(z: &Cochain<f64>, mu: &[f64], axes: &[usize]) -> Result<f64> {
    let g = z.grid();
    if g.dim() != 4 || z.degree() != 2 {
        return contract("the multiplier residual needs a 2-form in dimension 4");
    }
    if mu.len() != g.n_vertices() {
        return Err(Error::DimensionMismatch { expected: g.n_vertices(), found: mu.len() });
    }
    if axes.is_empty() || axes.iter().any(|&a| a >= 4) {
        return contract("test waves need axes within the grid dimension");
    }
    let f = to_pointwise(z);
    let vol = g.measures(4);
    let kernels: Vec<MultiVector<f64>> = f.values().iter().map(|zv| wedge_top_gradient(zv, 2)).collect();
    let z_norm = f.l2_norm();
    let periods = g.periods();
    let mut waves = Vec::new();
    for code in 0..3usize.pow(axes.len() as u32) {
        let mut k = [0i32; 4];
        let mut c = code;
        for &a in axes {
            k[a] = (c % 3) as i32 - 1;
            c /= 3;
        }
        // k and -k give the same test space.
        if k.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
            waves.push(k);
        }
    }
    let mut worst: f64 = 0.0;
    for k in &waves {
        for a in 0..4 {
            for cosine in [false, true] {
                let (mut num, mut dv_sq) = (0.0, 0.0);
                for v in 0..g.n_vertices() {
                    let x = g.top_center(v);
                    let phi = g.log_scales(&x);
                    let theta: f64 = (0..4).map(|i| 2.0 * std::f64::consts::PI * k[i] as f64 * x[i] / periods[i]).sum();
                    let ds = if cosine { -theta.sin() } else { theta.cos() };
                    let mut w = MultiVector::zero(4);
                    for b in 0..4 {
                        if b != a && k[b] != 0 {
                            let coef = ds * 2.0 * std::f64::consts::PI * k[b] as f64 / periods[b] * (-phi[a] - phi[b]).exp();
                            w = w.add(&MultiVector::basis(4, &[b, a]).scale(coef));
                        }
                    }
                    num += vol[v] * (f.get(v).dot(&w) - mu[v] * kernels[v].dot(&w));
                    dv_sq += vol[v] * w.norm_sq();
                }
                if dv_sq > 0.0 && z_norm > 0.0 {
                    worst = worst.max(num.abs() / (z_norm * dv_sq.sqrt()));
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TangentOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iterations: 20_000, seed: 0 }
    }
}

/// Sampled elements of the kernel of `v -> DP_z(dv)` on potentials of one form.
#[derive(Clone, Debug)]
pub struct TangentSample {
    pub directions: Vec<Cochain<f64>>,
    /// `max |DP_z(dv)| / |dv|_W` over the samples.
    pub kernel_residual: f64,
    pub iterations: Vec<usize>,
}

/// Draws `count` random potentials and projects them, in the weighted L2
/// pairing, onto the kernel of the linearized constraint composed with `d`.
pub fn tangent_space_sample(
    z: &Cochain<f64>,
    set: &QuadraticConstraintSet,
    count: usize,
    opts: &TangentOptions,
) -> Result<TangentSample> {
    if set.arity() != 1 {
        return contract("tangent sampling supports single-form constraint sets");
    }
    let g = z.grid().clone();
    let k = z.degree();
    if k == 0 {
        return contract("potentials need forms of degree at least 1");
    }
    let der = set.derivative(std::slice::from_ref(z))?;
    let vol = g.measures(g.dim()).to_vec();
    let inv_w = g.star_weights(k - 1).iter().map(|w| 1.0 / w).collect::<Vec<f64>>();
    let forward = |v: &Cochain<f64>| -> Result<Vec<Vec<f64>>> { der.apply(&[v.d()?]) };
    let backward = |w: &[Vec<f64>]| -> Result<Cochain<f64>> {
        let weights: Vec<Vec<f64>> = w.iter().map(|wk| wk.iter().zip(&vol).map(|(a, b)| a * b).collect()).collect();
        let adj = der.adjoint(&weights)?.remove(0);
        let mut t = g.coboundary_transpose_values(k - 1, adj.values())?;
        t.iter_mut().zip(&inv_w).for_each(|(x, w)| *x *= w);
        Cochain::from_values(&g, k - 1, t)
    };
    let dotv = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).zip(&vol).map(|((p, q), w)| p * q * w).sum::<f64>()).sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut directions = Vec::with_capacity(count);
    let mut iterations = Vec::with_capacity(count);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let v = Cochain::from_values(&g, k - 1, (0..g.num_cells(k - 1)).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        // Solve (J J^*) lam = J v, then v - J^* lam.
        let rhs = forward(&v)?;
        let mut lam: Vec<Vec<f64>> = rhs.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut r = rhs.clone();
        let mut p = r.clone();
        let r0 = dotv(&rhs, &rhs).sqrt();
        let mut rr = dotv(&r, &r);
        let mut it = 0;
        while r0 > 0.0 && rr.sqrt() > opts.tolerance * r0 && it < opts.max_iterations {
            let ap = forward(&backward(&p)?)?;
            let pap = dotv(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for c in 0..lam.len() {
                for i in 0..lam[c].len() {
                    lam[c][i] += alpha * p[c][i];
                    r[c][i] -= alpha * ap[c][i];
                }
            }
            let rr_new = dotv(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for c in 0..p.len() {
                for i in 0..p[c].len() {
                    p[c][i] = r[c][i] + beta * p[c][i];
                }
            }
            it += 1;
        }
        if r0 > 0.0 && rr.sqrt() > opts.tolerance.sqrt() * r0 {
            return Err(Error::NoConvergence { iterations: it, residual: rr.sqrt() / r0, trace: vec![] });
        }
        let proj = v.sub(&backward(&lam)?)?;
        let res = forward(&proj)?;
        let dn = proj.d()?.norm();
        let rmax = res.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(if dn > 0.0 { rmax / dn } else { rmax });
        directions.push(proj);
        iterations.push(it);
    }
    Ok(TangentSample { directions, kernel_residual: worst, iterations })
}

/// `<d* z, v> = <z, dv>_W`.
pub fn de_on_tangent(z: &Cochain<f64>, v: &Cochain<f64>) -> Result<f64> {
    if v.degree() + 1 != z.degree() {
        return Err(Error::DegreeOutOfRange { degree: v.degree(), dim: z.grid().dim() });
    }
    z.inner(&v.d()?)
}

/// Skew matrix `H[i][j] = z(v_i, v_j)` of a 2-form in orthonormal components.
pub fn skew_matrix(z: &MultiVector<f64>) -> Mat4 {
    let mut h = [[0.0; 4]; 4];
    for i in 0..z.dim() {
        for j in i + 1..z.dim() {
            let c = z.coeff(mask_of(&[i, j]));
            h[i][j] = c;
            h[j][i] = -c;
        }
    }
    h
}

/// Relative eigenvalue gap of `Q` below which a point is masked.
pub const FRAME_GAP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FramePoint {
    /// Adapted orthonormal frame, rows are `v_j` (first two span the larger
    /// eigenspace of `Q`).
    pub frame: Mat4,
    pub a_sq: f64,
    pub b_sq: f64,
    /// `v_j(|i_{v_j} z|^2 - |z|^2/2) - sum_m gamma^j_mm (|i_{v_j} z|^2 - |i_{v_m} z|^2)`.
    pub residual: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct FrameResidual {
    pub points: Vec<Option<FramePoint>>,
    pub masked: usize,
    pub max_norm: f64,
    /// Measure-weighted L2 norm over evaluated points.
    pub l2_norm: f64,
}

struct Split {
    a_sq: f64,
    b_sq: f64,
    proj_a: Mat4,
    q: Mat4,
}

fn split(z: &MultiVector<f64>) -> Option<Split> {
    let h = skew_matrix(z);
    let mut q = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            q[i][j] = (0..4).map(|k| h[i][k] * h[j][k]).sum();
        }
    }
    let eig = SymmetricEigen::new(Matrix4::from_fn(|i, j| q[i][j])).eigenvalues;
    let a_sq = eig.max();
    let b_sq = eig.min().max(0.0);
    let zz = z.norm_sq();
    if zz == 0.0 || a_sq - b_sq < FRAME_GAP * zz {
        return None;
    }
    let mut proj_a = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            proj_a[i][j] = (q[i][j] - if i == j { b_sq } else { 0.0 }) / (a_sq - b_sq);
        }
    }
    Some(Split { a_sq, b_sq, proj_a, q })
}

/// Residuals of the adapted-frame first variation equations of a 2-form in
/// dimension 4. Points where `Q(v, w) = <i_v z, i_w z>` is nearly a multiple
/// of the metric, or that border such points, are masked.
pub fn frame_equation_residual(z: &FormField<f64>) -> Result<FrameResidual> {
    let g = z.grid();
    if g.dim() != 4 {
        return contract("frame equations need dimension 4");
    }
    let nv = g.n_vertices();
    let h = g.spacing();
    let vol = g.measures(4);
    let splits: Vec<Option<Split>> = z.values().iter().map(split).collect();
    let zz: Vec<f64> = z.values().iter().map(|v| v.norm_sq()).collect();
    let mut points = Vec::with_capacity(nv);
    let (mut masked, mut max_norm, mut l2) = (0, 0.0f64, 0.0);
    for v in 0..nv {
        let nbrs: Vec<(usize, usize)> = (0..4).map(|m| (g.shift_plus(v, m), g.shift_minus(v, m))).collect();
        let Some(s) = &splits[v] else {
            masked += 1;
            points.push(None);
            continue;
        };
        if nbrs.iter().any(|(p, q)| splits[*p].is_none() || splits[*q].is_none()) {
            masked += 1;
            points.push(None);
            continue;
        }
        let c = g.top_center(v);
        let phi = g.log_scales(&c);
        let gam = frame_connection(g.as_ref(), &c);
        let get = |u: usize| splits[u].as_ref().expect("checked");
        // Frame derivatives v_l of the scalars and of P_A.
        let mut grad_a = [0.0; 4];
        let mut grad_b = [0.0; 4];
        let mut dp = [[[0.0; 4]; 4]; 4];
        for l in 0..4 {
            let (p, q) = nbrs[l];
            let sc = (-phi[l]).exp() / (2.0 * h[l]);
            let (sp, sq) = (get(p), get(q));
            grad_a[l] = sc * ((sp.a_sq - 0.5 * zz[p]) - (sq.a_sq - 0.5 * zz[q]));
            grad_b[l] = sc * ((sp.b_sq - 0.5 * zz[p]) - (sq.b_sq - 0.5 * zz[q]));
            for j in 0..4 {
                for k in 0..4 {
                    let mut d = sc * (sp.proj_a[j][k] - sq.proj_a[j][k]);
                    for i in 0..4 {
                        d += gam[l][i][j] * s.proj_a[i][k] - s.proj_a[j][i] * gam[l][k][i];
                    }
                    dp[l][j][k] = d;
                }
            }
        }
        // K_A = sum over an orthonormal basis of A of (nabla_{v_m} P_A) v_m, and
        // the same for B with nabla P_B = -nabla P_A.
        let mut k_a = [0.0; 4];
        let mut k_b = [0.0; 4];
        for l in 0..4 {
            for kk in 0..4 {
                let pa = s.proj_a[l][kk];
                let pb = if l == kk { 1.0 } else { 0.0 } - pa;
                for j in 0..4 {
                    k_a[j] += pa * dp[l][j][kk];
                    k_b[j] -= pb * dp[l][j][kk];
                }
            }
        }
        let gap = s.a_sq - s.b_sq;
        let eig = SymmetricEigen::new(Matrix4::from_fn(|i, j| s.q[i][j]));
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let mut frame = [[0.0; 4]; 4];
        let mut residual = [0.0; 4];
        for (row, &idx) in order.iter().enumerate() {
            let e = eig.eigenvectors.column(idx);
            for i in 0..4 {
                frame[row][i] = e[i];
            }
            let dot = |w: &[f64; 4]| (0..4).map(|i| w[i] * e[i]).sum::<f64>();
            residual[row] = if row < 2 { dot(&grad_a) - gap * dot(&k_b) } else { dot(&grad_b) + gap * dot(&k_a) };
        }
        let norm = residual.iter().map(|r| r * r).sum::<f64>();
        max_norm = max_norm.max(norm.sqrt());
        l2 += vol[v] * norm;
        points.push(Some(FramePoint { frame, a_sq: s.a_sq, b_sq: s.b_sq, residual }));
    }
    Ok(FrameResidual { points, masked, max_norm, l2_norm: l2.sqrt() })
}

#[cfg(test)]
mod tests;
