//! Component fields sampled at n-cell centers, in the orthonormal coordinate
//! frame `v_i = e^{-phi_i} d/dx_i`, plus transfer maps to and from cochains
//! and centered-difference differential operators.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exterior::MultiVector;
use crate::geometry::{frame_connection, DiagonalMetric, Tensor3};
use crate::scalar::Real;

use super::{Cochain, TorusGrid};

/// Form-valued field: one [`MultiVector`] per n-cell center.
#[derive(Clone, Debug)]
pub struct FormField<T> {
    grid: Arc<TorusGrid>,
    values: Vec<MultiVector<T>>,
}

/// Vector field in orthonormal frame components, one per n-cell center.
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<TorusGrid>,
    values: Vec<[f64; 4]>,
}

fn check_grid(a: &Arc<TorusGrid>, b: &Arc<TorusGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch("fields live on different grids".into()))
    }
}

impl<T: Real> FormField<T> {
    pub fn new(grid: &Arc<TorusGrid>, values: Vec<MultiVector<T>>) -> Result<Self> {
        if values.len() != grid.n_vertices() {
            return Err(Error::DimensionMismatch { expected: grid.n_vertices(), found: values.len() });
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(&[f64]) -> MultiVector<T>) -> Self {
        let n = grid.dim();
        let values = (0..grid.n_vertices()).map(|v| f(&grid.top_center(v)[..n])).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[MultiVector<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [MultiVector<T>] {
        &mut self.values
    }

    pub fn get(&self, v: usize) -> &MultiVector<T> {
        &self.values[v]
    }

    pub fn map(&self, f: impl Fn(usize, &MultiVector<T>) -> MultiVector<T>) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().enumerate().map(|(v, z)| f(v, z)).collect() }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(self.map(|v, z| z.sub(&other.values[v])))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        Ok(self.map(|v, z| z.add(&other.values[v])))
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, z| m.max(z.max_abs()))
    }

    /// `sum_cells vol_c <a_c, b_c>` with the metric volume of each n-cell.
    pub fn l2_inner(&self, other: &Self) -> Result<T> {
        check_grid(&self.grid, &other.grid)?;
        let vol = self.grid.measures(self.grid.dim());
        let mut s = T::zero();
        for (v, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            s += T::lit(vol[v]) * a.dot(b);
        }
        Ok(s)
    }

    pub fn l2_norm(&self) -> T {
        self.l2_inner(self).expect("same grid").sqrt()
    }
}

impl VectorField {
    pub fn new(grid: &Arc<TorusGrid>, values: Vec<[f64; 4]>) -> Result<Self> {
        if values.len() != grid.n_vertices() {
            return Err(Error::DimensionMismatch { expected: grid.n_vertices(), found: values.len() });
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn(&[f64]) -> [f64; 4]) -> Self {
        let n = grid.dim();
        let values = (0..grid.n_vertices()).map(|v| f(&grid.top_center(v)[..n])).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 4]] {
        &self.values
    }

    /// Covariant derivative `out[v][m][j] = X^j_{;m} = v_m(X^j) + gamma_{mk}^j X^k`
    /// by centered differences.
    pub fn covariant_derivative(&self) -> Vec<[[f64; 4]; 4]> {
        let g = &self.grid;
        let n = g.dim();
        let h = g.spacing();
        (0..g.n_vertices())
            .map(|v| {
                let x = g.top_center(v);
                let phi = g.log_scales(&x);
                let gam = frame_connection(g.as_ref(), &x);
                let mut out = [[0.0; 4]; 4];
                for m in 0..n {
                    let p = &self.values[g.shift_plus(v, m)];
                    let q = &self.values[g.shift_minus(v, m)];
                    for j in 0..n {
                        let mut s = (-phi[m]).exp() * (p[j] - q[j]) / (2.0 * h[m]);
                        for k in 0..n {
                            s += gam[m][k][j] * self.values[v][k];
                        }
                        out[m][j] = s;
                    }
                }
                out
            })
            .collect()
    }
}

/// Centered coordinate derivative of a form field along `axis`.
fn coord_diff(f: &FormField<f64>, v: usize, axis: usize) -> MultiVector<f64> {
    let g = &f.grid;
    let h = g.spacing()[axis];
    f.values[g.shift_plus(v, axis)].sub(&f.values[g.shift_minus(v, axis)]).scale(0.5 / h)
}

impl FormField<f64> {
    /// Exterior derivative by centered differences of coordinate components.
    pub fn exterior_derivative(&self) -> Self {
        let g = &self.grid;
        let n = g.dim();
        let len = 1usize << n;
        // Coordinate components c_S = z_S prod_{i in S} e^{phi_i}.
        let coord: Vec<MultiVector<f64>> = self
            .values
            .iter()
            .enumerate()
            .map(|(v, z)| {
                let phi = g.log_scales(&g.top_center(v));
                let mut c = *z;
                for mask in 0..len {
                    c.set(mask, z.coeff(mask) * mask_scale(&phi, mask));
                }
                c
            })
            .collect();
        let cf = FormField { grid: g.clone(), values: coord };
        let values = (0..g.n_vertices())
            .map(|v| {
                let phi = g.log_scales(&g.top_center(v));
                let mut out = MultiVector::zero(n);
                for j in 0..n {
                    out = out.add(&coord_diff(&cf, v, j).ext_basis(j));
                }
                for mask in 0..len {
                    out.set(mask, out.coeff(mask) / mask_scale(&phi, mask));
                }
                out
            })
            .collect();
        Self { grid: g.clone(), values }
    }

    /// Pointwise interior product `i_X z`.
    pub fn interior(&self, x: &VectorField) -> Result<Self> {
        check_grid(&self.grid, &x.grid)?;
        let n = self.grid.dim();
        let values = self.values.iter().zip(&x.values).map(|(z, xv)| z.interior(&xv[..n])).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: self.grid.clone(), values })
    }

    /// `nabla_{v_m} z` at every point, for all m: `out[v][m]`.
    pub fn covariant_derivatives(&self) -> Vec<[MultiVector<f64>; 4]> {
        let g = &self.grid;
        let n = g.dim();
        (0..g.n_vertices())
            .map(|v| {
                let x = g.top_center(v);
                let phi = g.log_scales(&x);
                let gam = frame_connection(g.as_ref(), &x);
                let z = &self.values[v];
                let mut out = [MultiVector::zero(n); 4];
                for m in 0..n {
                    out[m] = covariant_at(z, coord_diff(self, v, m).scale((-phi[m]).exp()), &gam, m, n);
                }
                out
            })
            .collect()
    }

    /// Lie derivative `L_X z = X^k_{;m} e(w^m) i(v_k) z + nabla_X z`.
    pub fn lie_derivative(&self, x: &VectorField) -> Result<Self> {
        check_grid(&self.grid, &x.grid)?;
        let n = self.grid.dim();
        let dx = x.covariant_derivative();
        let nabla = self.covariant_derivatives();
        let values = (0..self.grid.n_vertices())
            .map(|v| {
                let z = &self.values[v];
                let mut out = MultiVector::zero(n);
                for k in 0..n {
                    let ik = z.int_basis(k);
                    for m in 0..n {
                        out = out.add(&ik.ext_basis(m).scale(dx[v][m][k]));
                    }
                }
                for m in 0..n {
                    out = out.add(&nabla[v][m].scale(x.values[v][m]));
                }
                out
            })
            .collect();
        Ok(Self { grid: self.grid.clone(), values })
    }
}

/// `nabla_{v_m} z = v_m(z) - gamma_{mk}^j e(w^k) i(v_j) z`.
fn covariant_at(z: &MultiVector<f64>, dz: MultiVector<f64>, gam: &Tensor3, m: usize, n: usize) -> MultiVector<f64> {
    let mut out = dz;
    for j in 0..n {
        let ij = z.int_basis(j);
        for k in 0..n {
            let c = gam[m][k][j];
            if c != 0.0 {
                out = out.sub(&ij.ext_basis(k).scale(c));
            }
        }
    }
    out
}

fn mask_scale(phi: &[f64; 4], mask: usize) -> f64 {
    let mut s = 0.0;
    for (i, p) in phi.iter().enumerate() {
        if mask & (1 << i) != 0 {
            s += p;
        }
    }
    s.exp()
}

/// Cell-center transfer: each n-cell averages, for every mask S, the values of
/// the 2^{n-k} k-cells of type S on its boundary divided by their measures.
pub fn to_pointwise<T: Real>(c: &Cochain<T>) -> FormField<T> {
    let g = c.grid();
    let n = g.dim();
    let k = c.degree();
    let meas = g.measures(k);
    let comp = ((1usize << n) - 1) as usize;
    let scale = T::lit(1.0 / (1u32 << (n - k)) as f64);
    let nv = g.n_vertices();
    let values = (0..nv)
        .map(|v| {
            let mut z = MultiVector::zero(n);
            for &s in g.blocks(k) {
                let free = comp ^ s;
                let mut acc = T::zero();
                for t in submasks(free) {
                    let idx = g.cell_index(s, g.shift_mask(v, t));
                    acc += c.values()[idx] / T::lit(meas[idx]);
                }
                z.set(s, acc * scale);
            }
            z
        })
        .collect();
    FormField { grid: g.clone(), values }
}

/// Transpose of [`to_pointwise`] restricted to degree `k`: maps a field of
/// component gradients back to a cochain gradient.
pub fn to_pointwise_transpose<T: Real>(f: &FormField<T>, k: usize) -> Result<Cochain<T>> {
    let g = f.grid();
    let n = g.dim();
    let meas = g.measures(k);
    let comp = (1usize << n) - 1;
    let scale = T::lit(1.0 / (1u32 << (n - k)) as f64);
    let mut out = Cochain::zeros(g, k)?;
    for &s in g.blocks(k) {
        let free = comp ^ s;
        for u in 0..g.n_vertices() {
            let idx = g.cell_index(s, u);
            let mut acc = T::zero();
            for t in submasks(free) {
                acc += f.values[g.shift_mask_minus(u, t)].coeff(s);
            }
            out.values_mut()[idx] = acc * scale / T::lit(meas[idx]);
        }
    }
    Ok(out)
}

/// Right inverse of [`to_pointwise`] on constant fields: each k-cell takes
/// its measure times the mean component over the adjacent n-cells.
pub fn from_pointwise<T: Real>(f: &FormField<T>, k: usize) -> Result<Cochain<T>> {
    let g = f.grid();
    let n = g.dim();
    let meas = g.measures(k);
    let comp = (1usize << n) - 1;
    let scale = T::lit(1.0 / (1u32 << (n - k)) as f64);
    let mut out = Cochain::zeros(g, k)?;
    for &s in g.blocks(k) {
        let free = comp ^ s;
        for u in 0..g.n_vertices() {
            let idx = g.cell_index(s, u);
            let mut acc = T::zero();
            for t in submasks(free) {
                acc += f.values[g.shift_mask_minus(u, t)].coeff(s);
            }
            out.values_mut()[idx] = acc * scale * T::lit(meas[idx]);
        }
    }
    Ok(out)
}

/// All submasks of `mask` (including 0 and `mask`), ascending.
fn submasks(mask: usize) -> impl Iterator<Item = usize> {
    (0..=mask).filter(move |t| t & !mask == 0)
}
