//! Periodic cubical complexes on rectangular tori.
//!
//! A k-cell is a pair (base vertex `v`, axis mask `S` with |S| = k): the cube
//! spanned from `v` along the axes of `S`. Cells of one degree are stored in
//! blocks, one block per mask (masks in the order of [`subsets`]), each block
//! holding all vertices in linear order (axis 0 fastest). A cochain value is
//! the integral of the represented form over the positively oriented cell.

mod pointwise;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::exterior::{subsets, wedge_sign, MultiVector, MAX_DIM};
use crate::geometry::{DiagonalMetric, Mat4, Tensor3, Vec4};
use crate::scalar::{sign, Real, Scalar};

pub use pointwise::{from_pointwise, to_pointwise, to_pointwise_transpose, FormField, VectorField};

/// One Fourier mode of the per-axis log-scales:
/// `phi_i(x) += amplitudes[i] * cos(2 pi sum_j wave[j] x_j / L_j + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMode {
    pub amplitudes: Vec<f64>,
    pub wave: Vec<i32>,
    pub phase: f64,
}

/// Diagonal metric `g = sum_i e^{2 phi_i(x)} dx_i^2` on the torus, with each
/// `phi_i` a finite sum of periodic modes. No modes means flat.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub modes: Vec<MetricMode>,
}

impl MetricSpec {
    pub fn flat() -> Self {
        Self::default()
    }

    /// Conformal metric `e^{2 a cos(2 pi x_axis / L)} g_flat`.
    pub fn conformal(dim: usize, amplitude: f64, axis: usize) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = 1;
        Self { modes: vec![MetricMode { amplitudes: vec![amplitude; dim], wave, phase: 0.0 }] }
    }

    /// Warped metric: every axis except `axis` is scaled by
    /// `e^{2 a cos(2 pi x_axis / L)}`, the `axis` direction stays unit.
    pub fn warped(dim: usize, amplitude: f64, axis: usize) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = 1;
        let mut amplitudes = vec![amplitude; dim];
        amplitudes[axis] = 0.0;
        Self { modes: vec![MetricMode { amplitudes, wave, phase: 0.0 }] }
    }

    pub fn single(amplitudes: Vec<f64>, wave: Vec<i32>, phase: f64) -> Self {
        Self { modes: vec![MetricMode { amplitudes, wave, phase }] }
    }

    pub fn is_flat(&self) -> bool {
        self.modes.iter().all(|m| m.amplitudes.iter().all(|&a| a == 0.0))
    }

    /// Short textual identifier, stable across runs.
    pub fn id(&self) -> String {
        if self.is_flat() {
            return "flat".to_string();
        }
        let parts: Vec<String> = self
            .modes
            .iter()
            .map(|m| {
                let amps: Vec<String> = m.amplitudes.iter().map(|a| format!("{a}")).collect();
                let wave: Vec<String> = m.wave.iter().map(|k| k.to_string()).collect();
                format!("a=[{}];k=[{}];p={}", amps.join(","), wave.join(","), m.phase)
            })
            .collect();
        parts.join("+")
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for m in &self.modes {
            if m.amplitudes.len() != dim || m.wave.len() != dim {
                return contract(format!(
                    "metric mode has {} amplitudes and {} wave numbers, grid dimension is {dim}",
                    m.amplitudes.len(),
                    m.wave.len()
                ));
            }
            if !m.amplitudes.iter().all(|a| a.is_finite()) || !m.phase.is_finite() {
                return contract("metric amplitudes must be finite");
            }
        }
        Ok(())
    }
}

/// Serializable description of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
    pub metric: MetricSpec,
}

impl GridSpec {
    /// Unit cube torus `T^n` with `m` cells per axis.
    pub fn unit(dim: usize, m: usize) -> Self {
        Self { dim, resolution: vec![m; dim], periods: vec![1.0; dim], metric: MetricSpec::flat() }
    }

    pub fn with_metric(mut self, metric: MetricSpec) -> Self {
        self.metric = metric;
        self
    }
}

/// Immutable periodic cubical grid with diagonal metric.
#[derive(Debug)]
pub struct TorusGrid {
    spec: GridSpec,
    n_vertices: usize,
    strides: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
    blocks: Vec<Vec<usize>>,
    block_of_mask: [usize; 1 << MAX_DIM],
    star_weights: [OnceLock<Vec<f64>>; MAX_DIM + 1],
    measures: [OnceLock<Vec<f64>>; MAX_DIM + 1],
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

impl TorusGrid {
    pub fn new(spec: GridSpec) -> Result<Arc<Self>> {
        let n = spec.dim;
        if !(2..=MAX_DIM).contains(&n) {
            return contract(format!("grid dimension must be 2, 3 or 4, got {n}"));
        }
        if spec.resolution.len() != n || spec.periods.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: spec.resolution.len().min(spec.periods.len()) });
        }
        if spec.resolution.iter().any(|&m| m < 3) {
            return contract("each axis needs at least 3 cells");
        }
        if spec.periods.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return contract("periods must be positive and finite");
        }
        spec.metric.validate(n)?;

        let mut strides = [0usize; MAX_DIM];
        let mut spacing = [0.0; MAX_DIM];
        let mut acc = 1;
        for i in 0..n {
            strides[i] = acc;
            acc *= spec.resolution[i];
            spacing[i] = spec.periods[i] / spec.resolution[i] as f64;
        }
        let n_vertices = acc;
        let mut plus = Vec::with_capacity(n);
        let mut minus = Vec::with_capacity(n);
        for a in 0..n {
            let m = spec.resolution[a];
            let s = strides[a];
            let (p, q): (Vec<usize>, Vec<usize>) = (0..n_vertices)
                .map(|v| {
                    let c = (v / s) % m;
                    let base = v - c * s;
                    (base + ((c + 1) % m) * s, base + ((c + m - 1) % m) * s)
                })
                .unzip();
            plus.push(p);
            minus.push(q);
        }
        let blocks: Vec<Vec<usize>> = (0..=n).map(|k| subsets(n, k)).collect();
        let mut block_of_mask = [usize::MAX; 1 << MAX_DIM];
        for list in &blocks {
            for (b, &mask) in list.iter().enumerate() {
                block_of_mask[mask] = b;
            }
        }
        Ok(Arc::new(Self {
            spec,
            n_vertices,
            strides,
            spacing,
            plus,
            minus,
            blocks,
            block_of_mask,
            star_weights: Default::default(),
            measures: Default::default(),
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn resolution(&self) -> &[usize] {
        &self.spec.resolution
    }

    pub fn periods(&self) -> &[f64] {
        &self.spec.periods
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.spec.metric
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim()]
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn num_cells(&self, k: usize) -> usize {
        binomial(self.dim(), k) * self.n_vertices
    }

    /// Axis masks of degree `k`, in block order.
    pub fn blocks(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn block_index(&self, mask: usize) -> usize {
        self.block_of_mask[mask]
    }

    pub fn cell_index(&self, mask: usize, vertex: usize) -> usize {
        self.block_of_mask[mask] * self.n_vertices + vertex
    }

    /// (vertex, mask) of a cell index.
    pub fn cell_of(&self, k: usize, index: usize) -> (usize, usize) {
        (index % self.n_vertices, self.blocks[k][index / self.n_vertices])
    }

    pub fn vertex_coords(&self, v: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for i in 0..self.dim() {
            c[i] = (v / self.strides[i]) % self.spec.resolution[i];
        }
        c
    }

    pub fn vertex_of_coords(&self, c: &[usize]) -> usize {
        (0..self.dim()).map(|i| (c[i] % self.spec.resolution[i]) * self.strides[i]).sum()
    }

    #[inline]
    pub fn shift_plus(&self, v: usize, axis: usize) -> usize {
        self.plus[axis][v]
    }

    #[inline]
    pub fn shift_minus(&self, v: usize, axis: usize) -> usize {
        self.minus[axis][v]
    }

    /// Translate a vertex by `+e_i` for every axis in `mask`.
    pub fn shift_mask(&self, mut v: usize, mask: usize) -> usize {
        let mut rest = mask;
        while rest != 0 {
            let a = rest.trailing_zeros() as usize;
            v = self.plus[a][v];
            rest &= rest - 1;
        }
        v
    }

    pub fn shift_mask_minus(&self, mut v: usize, mask: usize) -> usize {
        let mut rest = mask;
        while rest != 0 {
            let a = rest.trailing_zeros() as usize;
            v = self.minus[a][v];
            rest &= rest - 1;
        }
        v
    }

    /// Coordinates of the center of the cell (v, mask).
    pub fn cell_center(&self, v: usize, mask: usize) -> [f64; MAX_DIM] {
        let c = self.vertex_coords(v);
        let mut x = [0.0; MAX_DIM];
        for i in 0..self.dim() {
            let off = if mask & (1 << i) != 0 { 0.5 } else { 0.0 };
            x[i] = self.spacing[i] * (c[i] as f64 + off);
        }
        x
    }

    /// Center of the n-cell based at `v`; pointwise fields live here.
    pub fn top_center(&self, v: usize) -> [f64; MAX_DIM] {
        self.cell_center(v, (1 << self.dim()) - 1)
    }

    /// Metric length/area/volume of a cell, by the midpoint rule:
    /// `prod_{i in S} h_i e^{phi_i(center)}`.
    fn cell_measure_raw(&self, v: usize, mask: usize) -> (f64, f64) {
        let x = self.cell_center(v, mask);
        let phi = self.log_scales(&x);
        let mut primal = 1.0;
        let mut dual = 1.0;
        for i in 0..self.dim() {
            let l = self.spacing[i] * phi[i].exp();
            if mask & (1 << i) != 0 {
                primal *= l;
            } else {
                dual *= l;
            }
        }
        (primal, dual)
    }

    /// Metric measure of every k-cell, cached.
    pub fn measures(&self, k: usize) -> &[f64] {
        self.measures[k].get_or_init(|| {
            let mut out = Vec::with_capacity(self.num_cells(k));
            for &mask in &self.blocks[k] {
                for v in 0..self.n_vertices {
                    out.push(self.cell_measure_raw(v, mask).0);
                }
            }
            out
        })
    }

    /// Diagonal Hodge star weights of the k-cells: dual measure over primal
    /// measure, both evaluated at the cell center. Cached.
    pub fn star_weights(&self, k: usize) -> &[f64] {
        self.star_weights[k].get_or_init(|| {
            let mut out = Vec::with_capacity(self.num_cells(k));
            for &mask in &self.blocks[k] {
                for v in 0..self.n_vertices {
                    let (p, d) = self.cell_measure_raw(v, mask);
                    out.push(d / p);
                }
            }
            out
        })
    }

    /// Total metric volume.
    pub fn volume(&self) -> f64 {
        self.measures(self.dim()).iter().sum()
    }

    /// Smallest period.
    pub fn min_period(&self) -> f64 {
        self.periods().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Coboundary on raw value arrays; exact in any ring.
    pub fn coboundary_values<T: Scalar>(&self, k: usize, input: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if k >= n {
            return Err(Error::DegreeOutOfRange { degree: k, dim: n });
        }
        self.check_len(k, input.len())?;
        let nv = self.n_vertices;
        let mut out = vec![T::zero(); self.num_cells(k + 1)];
        for (bo, &target) in self.blocks[k + 1].iter().enumerate() {
            let dst = &mut out[bo * nv..(bo + 1) * nv];
            for j in 0..n {
                let bit = 1 << j;
                if target & bit == 0 {
                    continue;
                }
                let face = target ^ bit;
                let s: T = sign((target & (bit - 1)).count_ones() % 2 == 1);
                let src = &input[self.block_of_mask[face] * nv..][..nv];
                let plus = &self.plus[j];
                for v in 0..nv {
                    dst[v] += s * (src[plus[v]] - src[v]);
                }
            }
        }
        Ok(out)
    }

    /// Transpose of the coboundary `d_k^T : C^{k+1} -> C^k` in gather form.
    pub fn coboundary_transpose_values<T: Scalar>(&self, k: usize, input: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if k >= n {
            return Err(Error::DegreeOutOfRange { degree: k, dim: n });
        }
        self.check_len(k + 1, input.len())?;
        let nv = self.n_vertices;
        let mut out = vec![T::zero(); self.num_cells(k)];
        for (bo, &face) in self.blocks[k].iter().enumerate() {
            let dst = &mut out[bo * nv..(bo + 1) * nv];
            for j in 0..n {
                let bit = 1 << j;
                if face & bit != 0 {
                    continue;
                }
                let target = face | bit;
                let s: T = sign((target & (bit - 1)).count_ones() % 2 == 1);
                let src = &input[self.block_of_mask[target] * nv..][..nv];
                let minus = &self.minus[j];
                for v in 0..nv {
                    dst[v] += s * (src[minus[v]] - src[v]);
                }
            }
        }
        Ok(out)
    }

    fn check_len(&self, k: usize, len: usize) -> Result<()> {
        let expected = self.num_cells(k);
        if len != expected {
            return Err(Error::DimensionMismatch { expected, found: len });
        }
        Ok(())
    }

    fn check_degree(&self, k: usize) -> Result<()> {
        if k > self.dim() {
            return Err(Error::DegreeOutOfRange { degree: k, dim: self.dim() });
        }
        Ok(())
    }
}

impl DiagonalMetric for TorusGrid {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn log_scales(&self, x: &[f64]) -> Vec4 {
        let mut phi = [0.0; 4];
        for m in &self.spec.metric.modes {
            let th = self.mode_phase(m, x);
            for i in 0..self.spec.dim {
                phi[i] += m.amplitudes[i] * th.cos();
            }
        }
        phi
    }

    fn d_log_scales(&self, x: &[f64]) -> Mat4 {
        let n = self.spec.dim;
        let mut d = [[0.0; 4]; 4];
        for m in &self.spec.metric.modes {
            let th = self.mode_phase(m, x);
            for k in 0..n {
                let kk = std::f64::consts::TAU * m.wave[k] as f64 / self.spec.periods[k];
                for i in 0..n {
                    d[k][i] -= m.amplitudes[i] * th.sin() * kk;
                }
            }
        }
        d
    }

    fn dd_log_scales(&self, x: &[f64]) -> Tensor3 {
        let n = self.spec.dim;
        let mut dd = [[[0.0; 4]; 4]; 4];
        for m in &self.spec.metric.modes {
            let th = self.mode_phase(m, x);
            for k in 0..n {
                let kk = std::f64::consts::TAU * m.wave[k] as f64 / self.spec.periods[k];
                for l in 0..n {
                    let kl = std::f64::consts::TAU * m.wave[l] as f64 / self.spec.periods[l];
                    for i in 0..n {
                        dd[k][l][i] -= m.amplitudes[i] * th.cos() * kk * kl;
                    }
                }
            }
        }
        dd
    }
}

impl TorusGrid {
    fn mode_phase(&self, m: &MetricMode, x: &[f64]) -> f64 {
        let mut th = m.phase;
        for j in 0..self.spec.dim {
            th += std::f64::consts::TAU * m.wave[j] as f64 * x[j] / self.spec.periods[j];
        }
        th
    }
}

/// A discrete k-form: one value per k-cell.
#[derive(Clone, Debug)]
pub struct Cochain<T> {
    grid: Arc<TorusGrid>,
    degree: usize,
    values: Vec<T>,
}

impl<T: Scalar> Cochain<T> {
    pub fn zeros(grid: &Arc<TorusGrid>, degree: usize) -> Result<Self> {
        grid.check_degree(degree)?;
        Ok(Self { grid: grid.clone(), degree, values: vec![T::zero(); grid.num_cells(degree)] })
    }

    pub fn from_values(grid: &Arc<TorusGrid>, degree: usize, values: Vec<T>) -> Result<Self> {
        grid.check_degree(degree)?;
        grid.check_len(degree, values.len())?;
        Ok(Self { grid: grid.clone(), degree, values })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, vertex: usize, mask: usize) -> T {
        self.values[self.grid.cell_index(mask, vertex)]
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if !(Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid) {
            return Err(Error::GridMismatch("cochains live on different grids".into()));
        }
        if self.degree != other.degree {
            return Err(Error::GridMismatch(format!("degree {} vs degree {}", self.degree, other.degree)));
        }
        Ok(())
    }

    fn with_values(&self, degree: usize, values: Vec<T>) -> Self {
        Self { grid: self.grid.clone(), degree, values }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.with_values(self.degree, self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(self.with_values(self.degree, self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect()))
    }

    pub fn scale(&self, s: T) -> Self {
        self.with_values(self.degree, self.values.iter().map(|&a| a * s).collect())
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    /// Unweighted sum of all values (for top degree, the integral).
    pub fn total(&self) -> T {
        let mut s = T::zero();
        for &v in &self.values {
            s += v;
        }
        s
    }

    pub fn d(&self) -> Result<Self> {
        let vals = self.grid.coboundary_values(self.degree, &self.values)?;
        Ok(self.with_values(self.degree + 1, vals))
    }

    /// Coordinate-constant form `coeff * dx^mask`: integral over matching cells.
    pub fn coordinate_form(grid: &Arc<TorusGrid>, mask: usize, coeff: T, cell_volume: T) -> Result<Self> {
        let k = mask.count_ones() as usize;
        let mut c = Self::zeros(grid, k)?;
        let b = grid.block_index(mask);
        let nv = grid.n_vertices();
        if b == usize::MAX {
            return contract("mask exceeds grid dimension");
        }
        for x in &mut c.values[b * nv..(b + 1) * nv] {
            *x = coeff * cell_volume;
        }
        Ok(c)
    }
}

impl<T: Real> Cochain<T> {
    /// Induced inner product `sum_sigma w_sigma a_sigma b_sigma`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        let w = self.grid.star_weights(self.degree);
        let mut s = T::zero();
        for i in 0..self.values.len() {
            s += T::lit(w[i]) * self.values[i] * other.values[i];
        }
        Ok(s)
    }

    pub fn norm_sq(&self) -> T {
        self.inner(self).expect("same shape")
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// Euclidean norm of the raw value array.
    pub fn plain_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Integrate a form given by its coordinate components over every k-cell
    /// with 3-point Gauss-Legendre quadrature along each cell axis.
    pub fn integrate(grid: &Arc<TorusGrid>, degree: usize, f: impl Fn(&[f64]) -> MultiVector<f64>) -> Result<Self> {
        grid.check_degree(degree)?;
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let n = grid.dim();
        let h = grid.spacing();
        let mut values = Vec::with_capacity(grid.num_cells(degree));
        for &mask in grid.blocks(degree) {
            let axes: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            let npts = 3usize.pow(axes.len() as u32);
            let jac: f64 = axes.iter().map(|&i| 0.5 * h[i]).product();
            for v in 0..grid.n_vertices() {
                let base = grid.cell_center(v, 0);
                let mut acc = 0.0;
                for p in 0..npts {
                    let mut x = base;
                    let mut w = 1.0;
                    let mut q = p;
                    for &i in &axes {
                        let node = q % 3;
                        q /= 3;
                        x[i] += h[i] * 0.5 * (1.0 + NODES[node]);
                        w *= WEIGHTS[node];
                    }
                    acc += w * f(&x[..n]).coeff(mask);
                }
                values.push(T::lit(acc * jac));
            }
        }
        Self::from_values(grid, degree, values)
    }

    pub fn to_f64(&self) -> Cochain<f64> {
        Cochain { grid: self.grid.clone(), degree: self.degree, values: self.values.iter().map(|v| v.to_f64_lossy()).collect() }
    }

    pub fn from_f64(c: &Cochain<f64>) -> Self {
        Cochain { grid: c.grid.clone(), degree: c.degree, values: c.values.iter().map(|&v| T::lit(v)).collect() }
    }
}

/// Cubical cup product
/// `(a u b)(v, U) = sum_{S u T = U} sign(S, T) a(v, S) b(v + e_S, T)`.
pub fn cup<T: Scalar>(a: &Cochain<T>, b: &Cochain<T>) -> Result<Cochain<T>> {
    let grid = a.grid();
    if !(Arc::ptr_eq(grid, b.grid()) || **grid == **b.grid()) {
        return Err(Error::GridMismatch("cup of cochains on different grids".into()));
    }
    let (p, q) = (a.degree(), b.degree());
    let n = grid.dim();
    if p + q > n {
        return Err(Error::DegreeOutOfRange { degree: p + q, dim: n });
    }
    let nv = grid.n_vertices();
    let mut out = Cochain::zeros(grid, p + q)?;
    for (bo, &u) in grid.blocks(p + q).iter().enumerate() {
        let dst = &mut out.values[bo * nv..(bo + 1) * nv];
        for &s in grid.blocks(p) {
            if s & !u != 0 {
                continue;
            }
            let t = u ^ s;
            let sg: T = sign(wedge_sign(s, t));
            let av = &a.values[grid.block_index(s) * nv..][..nv];
            let bv = &b.values[grid.block_index(t) * nv..][..nv];
            for v in 0..nv {
                dst[v] += sg * av[v] * bv[grid.shift_mask(v, s)];
            }
        }
    }
    Ok(out)
}

/// Graded-symmetrized cup product `1/2 (a u b + (-1)^{pq} b u a)`.
pub fn sym_cup<T: Scalar>(a: &Cochain<T>, b: &Cochain<T>) -> Result<Cochain<T>> {
    let ab = cup(a, b)?;
    let ba = cup(b, a)?;
    let s: T = sign(a.degree() * b.degree() % 2 == 1);
    let half = T::one() / (T::one() + T::one());
    let mut out = ab;
    for (x, &y) in out.values.iter_mut().zip(&ba.values) {
        *x = half * (*x + s * y);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// `d_k : C^k -> C^{k+1}`.
    Coboundary,
    /// `d_{k-1}^T : C^k -> C^{k-1}` (unweighted transpose).
    CoboundaryTranspose,
    /// Diagonal star on k-cells; output indexed by the same cells, read as
    /// values on the dual (n-k)-cells.
    Star,
    /// `delta_k = W_{k-1}^{-1} d_{k-1}^T W_k : C^k -> C^{k-1}`.
    Codifferential,
    /// `Delta_k = delta d + d delta`.
    Laplacian,
}

/// Matrix-free linear operator on cochains of a fixed domain degree.
#[derive(Clone, Debug)]
pub struct GridOperator {
    grid: Arc<TorusGrid>,
    kind: OperatorKind,
    domain: usize,
}

pub fn coboundary(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    if k >= grid.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, dim: grid.dim() });
    }
    Ok(GridOperator { grid: grid.clone(), kind: OperatorKind::Coboundary, domain: k })
}

pub fn hodge_star_op(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    grid.check_degree(k)?;
    Ok(GridOperator { grid: grid.clone(), kind: OperatorKind::Star, domain: k })
}

/// Codifferential on k-cochains, `1 <= k <= n`.
pub fn codifferential(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    if k == 0 || k > grid.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, dim: grid.dim() });
    }
    Ok(GridOperator { grid: grid.clone(), kind: OperatorKind::Codifferential, domain: k })
}

pub fn coboundary_transpose(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    if k == 0 || k > grid.dim() {
        return Err(Error::DegreeOutOfRange { degree: k, dim: grid.dim() });
    }
    Ok(GridOperator { grid: grid.clone(), kind: OperatorKind::CoboundaryTranspose, domain: k })
}

pub fn laplacian_op(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    grid.check_degree(k)?;
    Ok(GridOperator { grid: grid.clone(), kind: OperatorKind::Laplacian, domain: k })
}

impl GridOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn domain_degree(&self) -> usize {
        self.domain
    }

    pub fn codomain_degree(&self) -> usize {
        match self.kind {
            OperatorKind::Coboundary => self.domain + 1,
            OperatorKind::CoboundaryTranspose | OperatorKind::Codifferential => self.domain - 1,
            OperatorKind::Star => self.grid.dim() - self.domain,
            OperatorKind::Laplacian => self.domain,
        }
    }

    fn check_input<T: Scalar>(&self, c: &Cochain<T>) -> Result<()> {
        if !(Arc::ptr_eq(&self.grid, c.grid()) || *self.grid == **c.grid()) {
            return Err(Error::GridMismatch("operator and cochain grids differ".into()));
        }
        if c.degree() != self.domain {
            return Err(Error::DegreeOutOfRange { degree: c.degree(), dim: self.grid.dim() });
        }
        Ok(())
    }

    /// Apply the metric-free operators in any ring.
    pub fn apply_exact<T: Scalar>(&self, c: &Cochain<T>) -> Result<Cochain<T>> {
        self.check_input(c)?;
        match self.kind {
            OperatorKind::Coboundary => c.d(),
            OperatorKind::CoboundaryTranspose => {
                let vals = self.grid.coboundary_transpose_values(self.domain - 1, c.values())?;
                Ok(c.with_values(self.domain - 1, vals))
            }
            _ => contract("metric operators need a floating point scalar"),
        }
    }

    pub fn apply<T: Real>(&self, c: &Cochain<T>) -> Result<Cochain<T>> {
        self.check_input(c)?;
        let g = &self.grid;
        let k = self.domain;
        match self.kind {
            OperatorKind::Coboundary | OperatorKind::CoboundaryTranspose => self.apply_exact(c),
            OperatorKind::Star => {
                let w = g.star_weights(k);
                let vals = c.values().iter().zip(w).map(|(&x, &wi)| x * T::lit(wi)).collect();
                Ok(c.with_values(g.dim() - k, vals))
            }
            OperatorKind::Codifferential => Ok(c.with_values(k - 1, codifferential_values(g, k, c.values())?)),
            OperatorKind::Laplacian => {
                let mut out = vec![T::zero(); c.len()];
                if k < g.dim() {
                    let dc = g.coboundary_values(k, c.values())?;
                    let back = codifferential_values(g, k + 1, &dc)?;
                    for (o, b) in out.iter_mut().zip(back) {
                        *o += b;
                    }
                }
                if k > 0 {
                    let dl = codifferential_values(g, k, c.values())?;
                    let up = g.coboundary_values(k - 1, &dl)?;
                    for (o, u) in out.iter_mut().zip(up) {
                        *o += u;
                    }
                }
                Ok(c.with_values(k, out))
            }
        }
    }
}

/// `delta_k` on raw values.
pub(crate) fn codifferential_values<T: Real>(g: &TorusGrid, k: usize, input: &[T]) -> Result<Vec<T>> {
    let wk = g.star_weights(k);
    let weighted: Vec<T> = input.iter().zip(wk).map(|(&x, &w)| x * T::lit(w)).collect();
    let mut out = g.coboundary_transpose_values(k - 1, &weighted)?;
    let wl = g.star_weights(k - 1);
    for (o, &w) in out.iter_mut().zip(wl) {
        *o /= T::lit(w);
    }
    Ok(out)
}
