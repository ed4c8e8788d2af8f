//! Quadratic constraints `P^k(z) = sum_{i,j} p^k_{ij} ^ z_i ^ z_j` on tuples
//! of cochains, their derivatives and the cohomological feasibility screen.
//!
//! Collocation mode evaluates the top coefficient of the wedge of the
//! pointwise fields at every n-cell center (for a single 2-form in dimension
//! 4 and `p = 1` this is `2 Pf(z)`). Cup mode evaluates the cubical cup
//! product per top cell; its total is a cohomology invariant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::exterior::{wedge_sign, MultiVector};
use crate::grid::{cup, sym_cup, to_pointwise, to_pointwise_transpose, Cochain, FormField, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Collocation,
    Cup,
}

/// One summand `p ^ z_left ^ z_right` of constraint number `constraint`.
#[derive(Clone, Debug)]
pub struct ConstraintTerm {
    pub constraint: usize,
    pub left: usize,
    pub right: usize,
    pub coefficient: Cochain<f64>,
}

#[derive(Clone, Debug)]
pub struct QuadraticConstraintSet {
    grid: Arc<TorusGrid>,
    degrees: Vec<usize>,
    count: usize,
    terms: Vec<ConstraintTerm>,
    pointwise: Vec<FormField<f64>>,
    mode: EvalMode,
}

/// Per-constraint values at points (collocation) or top cells (cup), both as
/// densities with respect to the metric volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub mode: EvalMode,
    pub values: Vec<Vec<f64>>,
    pub max_norm: f64,
    /// `sqrt(sum_k sum_c vol_c P_kc^2)`.
    pub l2_norm: f64,
    /// `sum_c vol_c P_kc` per constraint.
    pub totals: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Infeasible,
    UnknownFeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub verdict: Verdict,
    /// Total cup square per constraint.
    pub totals: Vec<f64>,
    pub threshold: f64,
}

/// Relative threshold of the feasibility screen, against `|f|_W^2`.
pub const FEASIBILITY_THRESHOLD: f64 = 1e-8;
/// Coefficient cochains must satisfy `max|dp| <= this * max|p|`.
pub const COEFFICIENT_CLOSED_TOLERANCE: f64 = 1e-10;

/// Gradient of the linear functional `b -> top(a ^ b)` over k-forms `b`.
pub fn wedge_top_gradient(a: &MultiVector<f64>, k: usize) -> MultiVector<f64> {
    let n = a.dim();
    let full = (1usize << n) - 1;
    let mut g = MultiVector::zero(n);
    for s in 0..=full {
        if s.count_ones() as usize != k {
            continue;
        }
        let rest = full ^ s;
        let c = a.coeff(rest);
        if c != 0.0 {
            g.set(s, if wedge_sign(rest, s) { -c } else { c });
        }
    }
    g
}

impl QuadraticConstraintSet {
    /// `z ^ z = 0` for a single form of degree n/2 with unit coefficient.
    pub fn pfaffian(grid: &Arc<TorusGrid>, mode: EvalMode) -> Result<Self> {
        let n = grid.dim();
        if n % 2 != 0 {
            return contract("the z ^ z constraint needs an even dimension");
        }
        let one = Cochain::from_values(grid, 0, vec![1.0; grid.num_cells(0)])?;
        Self::new(grid, vec![n / 2], vec![ConstraintTerm { constraint: 0, left: 0, right: 0, coefficient: one }], mode)
    }

    pub fn new(grid: &Arc<TorusGrid>, degrees: Vec<usize>, terms: Vec<ConstraintTerm>, mode: EvalMode) -> Result<Self> {
        let n = grid.dim();
        if degrees.is_empty() || terms.is_empty() {
            return contract("a constraint set needs at least one form and one term");
        }
        for t in &terms {
            if t.left >= degrees.len() || t.right >= degrees.len() {
                return contract(format!("term refers to form {} of {}", t.left.max(t.right), degrees.len()));
            }
            let total = t.coefficient.degree() + degrees[t.left] + degrees[t.right];
            if total != n {
                return Err(Error::DegreeOutOfRange { degree: total, dim: n });
            }
            if !(Arc::ptr_eq(grid, t.coefficient.grid()) || **grid == **t.coefficient.grid()) {
                return Err(Error::GridMismatch("coefficient cochain on another grid".into()));
            }
            if t.coefficient.degree() < n {
                let dp = t.coefficient.d()?.max_abs();
                if dp > COEFFICIENT_CLOSED_TOLERANCE * t.coefficient.max_abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::NotClosed { residual: dp });
                }
            }
        }
        let count = terms.iter().map(|t| t.constraint).max().unwrap_or(0) + 1;
        let pointwise = terms.iter().map(|t| to_pointwise(&t.coefficient)).collect();
        Ok(Self { grid: grid.clone(), degrees, count, terms, pointwise, mode })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn arity(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    pub fn with_mode(&self, mode: EvalMode) -> Self {
        Self { mode, ..self.clone() }
    }

    fn check_tuple(&self, z: &[Cochain<f64>]) -> Result<()> {
        if z.len() != self.arity() {
            return Err(Error::DimensionMismatch { expected: self.arity(), found: z.len() });
        }
        for (c, &k) in z.iter().zip(&self.degrees) {
            if c.degree() != k {
                return Err(Error::DegreeOutOfRange { degree: c.degree(), dim: self.grid.dim() });
            }
            if !(Arc::ptr_eq(&self.grid, c.grid()) || *self.grid == **c.grid()) {
                return Err(Error::GridMismatch("form on another grid".into()));
            }
        }
        Ok(())
    }

    /// Collocation values from pointwise fields: `out[k][point]`.
    pub fn evaluate_fields(&self, fields: &[FormField<f64>]) -> Vec<Vec<f64>> {
        self.bilinear_fields(fields, fields)
    }

    /// Symmetrized bilinear form `B(a, b)` with `B(z, z) = P(z)`.
    fn bilinear_fields(&self, a: &[FormField<f64>], b: &[FormField<f64>]) -> Vec<Vec<f64>> {
        let nv = self.grid.n_vertices();
        let mut out = vec![vec![0.0; nv]; self.count];
        for (t, p) in self.terms.iter().zip(&self.pointwise) {
            let dst = &mut out[t.constraint];
            for c in 0..nv {
                let pc = p.get(c);
                let x = pc.wedge_unchecked(a[t.left].get(c)).wedge_unchecked(b[t.right].get(c)).top();
                let y = pc.wedge_unchecked(b[t.left].get(c)).wedge_unchecked(a[t.right].get(c)).top();
                dst[c] += 0.5 * (x + y);
            }
        }
        out
    }

    fn bilinear_cells(&self, a: &[Cochain<f64>], b: &[Cochain<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.dim();
        let meas = self.grid.measures(n);
        let mut out = vec![vec![0.0; self.grid.n_vertices()]; self.count];
        for t in &self.terms {
            let ab = sym_cup(&a[t.left], &b[t.right])?;
            let ba = sym_cup(&b[t.left], &a[t.right])?;
            let both = ab.add(&ba)?.scale(0.5);
            let v = cup(&t.coefficient, &both)?;
            for (c, (o, x)) in out[t.constraint].iter_mut().zip(v.values()).enumerate() {
                *o += x / meas[c];
            }
        }
        Ok(out)
    }

    fn residual(&self, values: Vec<Vec<f64>>) -> ConstraintResidual {
        let meas = self.grid.measures(self.grid.dim());
        let mut max_norm: f64 = 0.0;
        let mut l2 = 0.0;
        let mut totals = Vec::with_capacity(values.len());
        for vk in &values {
            let mut tot = 0.0;
            for (v, m) in vk.iter().zip(meas) {
                max_norm = max_norm.max(v.abs());
                l2 += m * v * v;
                tot += m * v;
            }
            totals.push(tot);
        }
        ConstraintResidual { mode: self.mode, values, max_norm, l2_norm: l2.sqrt(), totals }
    }

    pub fn fields(&self, z: &[Cochain<f64>]) -> Vec<FormField<f64>> {
        z.iter().map(to_pointwise).collect()
    }

    pub fn evaluate(&self, z: &[Cochain<f64>]) -> Result<ConstraintResidual> {
        self.check_tuple(z)?;
        let values = match self.mode {
            EvalMode::Collocation => self.evaluate_fields(&self.fields(z)),
            EvalMode::Cup => self.bilinear_cells(z, z)?,
        };
        Ok(self.residual(values))
    }

    /// Derivative `DP_z` as a linear map on direction tuples.
    pub fn derivative<'a>(&'a self, z: &[Cochain<f64>]) -> Result<ConstraintDerivative<'a>> {
        self.check_tuple(z)?;
        Ok(ConstraintDerivative { set: self, z: z.to_vec(), fields: self.fields(z) })
    }

    /// Topological screen on the total cup square of the class of `f`.
    pub fn feasibility_screen(&self, f: &[Cochain<f64>]) -> Result<FeasibilityReport> {
        self.check_tuple(f)?;
        for c in f {
            if c.degree() < self.grid.dim() {
                let df = c.d()?.max_abs();
                if df > COEFFICIENT_CLOSED_TOLERANCE * c.max_abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::NotClosed { residual: df });
                }
            }
        }
        let cupped = self.with_mode(EvalMode::Cup).evaluate(f)?;
        let norm_sq: f64 = f.iter().map(|c| c.norm_sq()).sum();
        let threshold = FEASIBILITY_THRESHOLD * norm_sq;
        let verdict =
            if cupped.totals.iter().any(|t| t.abs() > threshold) { Verdict::Infeasible } else { Verdict::UnknownFeasible };
        Ok(FeasibilityReport { verdict, totals: cupped.totals, threshold })
    }
}

/// `DP_z(v) = 2 B(z, v)`.
#[derive(Clone, Debug)]
pub struct ConstraintDerivative<'a> {
    set: &'a QuadraticConstraintSet,
    z: Vec<Cochain<f64>>,
    fields: Vec<FormField<f64>>,
}

impl ConstraintDerivative<'_> {
    pub fn apply(&self, v: &[Cochain<f64>]) -> Result<Vec<Vec<f64>>> {
        self.set.check_tuple(v)?;
        let mut out = match self.set.mode {
            EvalMode::Collocation => self.set.bilinear_fields(&self.fields, &self.set.fields(v)),
            EvalMode::Cup => self.set.bilinear_cells(&self.z, v)?,
        };
        for vk in &mut out {
            for x in vk.iter_mut() {
                *x *= 2.0;
            }
        }
        Ok(out)
    }

    /// Pointwise gradients `d/dz_i sum_k sum_c w_kc P_kc` as component fields.
    pub fn adjoint_fields(&self, weights: &[Vec<f64>]) -> Result<Vec<FormField<f64>>> {
        let set = self.set;
        if set.mode != EvalMode::Collocation {
            return contract("pointwise gradients are only defined in collocation mode");
        }
        if weights.len() != set.count {
            return Err(Error::DimensionMismatch { expected: set.count, found: weights.len() });
        }
        let n = set.grid.dim();
        let nv = set.grid.n_vertices();
        let mut out: Vec<Vec<MultiVector<f64>>> = vec![vec![MultiVector::zero(n); nv]; set.arity()];
        for (t, p) in set.terms.iter().zip(&set.pointwise) {
            let w = &weights[t.constraint];
            let (dl, dr) = (set.degrees[t.left], set.degrees[t.right]);
            let flip = dl * dr % 2 == 1;
            for c in 0..nv {
                if w[c] == 0.0 {
                    continue;
                }
                let pc = p.get(c);
                // top(p ^ v ^ z_r) = (-1)^{dl dr} top(p ^ z_r ^ v)
                let gl = wedge_top_gradient(&pc.wedge_unchecked(self.fields[t.right].get(c)), dl);
                let gl = if flip { gl.scale(-1.0) } else { gl };
                let gr = wedge_top_gradient(&pc.wedge_unchecked(self.fields[t.left].get(c)), dr);
                out[t.left][c] = out[t.left][c].add(&gl.scale(w[c]));
                out[t.right][c] = out[t.right][c].add(&gr.scale(w[c]));
            }
        }
        out.into_iter().map(|vals| FormField::new(&set.grid, vals)).collect()
    }

    /// Cochain gradients with respect to the Euclidean pairing of cochain
    /// values: `sum_kc w_kc DP_z(v)_kc = sum_i <G_i, v_i>`.
    pub fn adjoint(&self, weights: &[Vec<f64>]) -> Result<Vec<Cochain<f64>>> {
        self.adjoint_fields(weights)?.iter().zip(&self.set.degrees).map(|(f, &k)| to_pointwise_transpose(f, k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::mask_of;
    use crate::grid::{GridSpec, MetricSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(grid: &Arc<TorusGrid>, k: usize, seed: u64) -> Cochain<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Cochain::from_values(grid, k, (0..grid.num_cells(k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn grid() -> Arc<TorusGrid> {
        TorusGrid::new(GridSpec::unit(4, 3).with_metric(MetricSpec::single(vec![0.1, 0.2, -0.1, 0.05], vec![1, 1, 0, 1], 0.2)))
            .unwrap()
    }

    fn coordinate(g: &Arc<TorusGrid>, axes: &[usize], c: f64) -> Cochain<f64> {
        let h = g.spacing();
        Cochain::coordinate_form(g, mask_of(axes), c, axes.iter().map(|&i| h[i]).product()).unwrap()
    }

    #[test]
    fn decomposable_and_symplectic_examples() {
        let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let a = coordinate(&g, &[0, 1], 1.0);
        let r = p.evaluate(&[a.clone()]).unwrap();
        assert_eq!(r.max_norm, 0.0);
        let b = a.add(&coordinate(&g, &[2, 3], 1.0)).unwrap();
        let r = p.evaluate(&[b]).unwrap();
        assert!(r.values[0].iter().all(|&v| (v - 2.0).abs() < 1e-14));
        assert!((r.totals[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collocation_is_twice_the_pfaffian() {
        let g = grid();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let z = random(&g, 2, 1);
        let r = p.evaluate(&[z.clone()]).unwrap();
        let f = to_pointwise(&z);
        for (c, v) in r.values[0].iter().enumerate() {
            assert!((v - 2.0 * f.get(c).pfaffian().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cup_total_matches_sym_cup() {
        let g = grid();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Cup).unwrap();
        let z = random(&g, 2, 2);
        let r = p.evaluate(&[z.clone()]).unwrap();
        let direct = sym_cup(&z, &z).unwrap().total();
        assert!((r.totals[0] - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn evaluation_is_quadratic() {
        let g = grid();
        for mode in [EvalMode::Collocation, EvalMode::Cup] {
            let p = QuadraticConstraintSet::pfaffian(&g, mode).unwrap();
            let z = random(&g, 2, 3);
            let a = p.evaluate(&[z.clone()]).unwrap();
            let b = p.evaluate(&[z.scale(2.0)]).unwrap();
            for (x, y) in a.values[0].iter().zip(&b.values[0]) {
                assert_eq!(4.0 * x, *y);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let g = grid();
        for mode in [EvalMode::Collocation, EvalMode::Cup] {
            let p = QuadraticConstraintSet::pfaffian(&g, mode).unwrap();
            for s in 0..20 {
                // Unit-size components: cochain values scaled by the 2-cell area.
                let z = random(&g, 2, 10 + s).scale(1.0 / 9.0);
                let v = random(&g, 2, 100 + s).scale(1.0 / 9.0);
                let eps = 1e-5;
                let plus = p.evaluate(&[z.add(&v.scale(eps)).unwrap()]).unwrap();
                let base = p.evaluate(&[z.clone()]).unwrap();
                let d = p.derivative(&[z.clone()]).unwrap().apply(&[v.clone()]).unwrap();
                for c in 0..d[0].len() {
                    let mismatch = plus.values[0][c] - base.values[0][c] - eps * d[0][c];
                    assert!(mismatch.abs() < 1e-9, "mismatch {mismatch}");
                }
            }
        }
    }

    #[test]
    fn derivative_at_zero_and_polarization_example() {
        let g = TorusGrid::new(GridSpec::unit(4, 3)).unwrap();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let zero = Cochain::zeros(&g, 2).unwrap();
        let v = random(&g, 2, 4);
        assert!(p.derivative(&[zero]).unwrap().apply(&[v]).unwrap()[0].iter().all(|&x| x == 0.0));
        let a = coordinate(&g, &[0, 1], 1.0);
        let b = coordinate(&g, &[2, 3], 1.0);
        let d = p.derivative(&[a]).unwrap().apply(&[b]).unwrap();
        assert!(d[0].iter().all(|&x| (x - 2.0).abs() < 1e-14));
    }

    #[test]
    fn derivative_is_symmetric() {
        let g = grid();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let z = random(&g, 2, 5);
        let v = random(&g, 2, 6);
        let a = p.derivative(&[z.clone()]).unwrap().apply(&[v.clone()]).unwrap();
        let b = p.derivative(&[v]).unwrap().apply(&[z]).unwrap();
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_transpose_of_derivative() {
        let g = grid();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let z = random(&g, 2, 7);
        let v = random(&g, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..g.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let der = p.derivative(&[z]).unwrap();
        let lhs: f64 = der.apply(&[v.clone()]).unwrap()[0].iter().zip(&w).map(|(a, b)| a * b).sum();
        let grad = der.adjoint(&[w]).unwrap();
        let rhs: f64 = grad[0].values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn general_pair_constraint_adjoint() {
        // P = z0 ^ z1 for a 1-form and a 3-form in dimension 4.
        let g = grid();
        let one = Cochain::from_values(&g, 0, vec![1.0; g.num_cells(0)]).unwrap();
        let set = QuadraticConstraintSet::new(
            &g,
            vec![1, 3],
            vec![ConstraintTerm { constraint: 0, left: 0, right: 1, coefficient: one }],
            EvalMode::Collocation,
        )
        .unwrap();
        let z = [random(&g, 1, 10), random(&g, 3, 11)];
        let v = [random(&g, 1, 12), random(&g, 3, 13)];
        let der = set.derivative(&z).unwrap();
        let w = vec![vec![0.5; g.n_vertices()]];
        let lhs: f64 = der.apply(&v).unwrap()[0].iter().map(|x| 0.5 * x).sum();
        let grad = der.adjoint(&w).unwrap();
        let rhs: f64 = (0..2).map(|i| grad[i].values().iter().zip(v[i].values()).map(|(a, b)| a * b).sum::<f64>()).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let eps = 1e-6;
        let zp = [z[0].add(&v[0].scale(eps)).unwrap(), z[1].add(&v[1].scale(eps)).unwrap()];
        let fd = (set.evaluate(&zp).unwrap().values[0][5] - set.evaluate(&z).unwrap().values[0][5]) / eps;
        assert!((fd - der.apply(&v).unwrap()[0][5]).abs() < 1e-5);
    }

    #[test]
    fn cup_total_is_cohomology_invariant() {
        let g = grid();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Cup).unwrap();
        let f = coordinate(&g, &[0, 1], 1.0).add(&coordinate(&g, &[2, 3], 0.5)).unwrap();
        let base = p.evaluate(&[f.clone()]).unwrap().totals[0];
        let moved = f.add(&random(&g, 1, 14).d().unwrap()).unwrap();
        let t = p.evaluate(&[moved]).unwrap().totals[0];
        assert!((t - base).abs() < 1e-9 * base.abs());
    }

    #[test]
    fn feasibility_screen_examples() {
        let g = TorusGrid::new(GridSpec::unit(4, 4)).unwrap();
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        let a = coordinate(&g, &[0, 1], 1.0);
        let b = coordinate(&g, &[2, 3], 1.0);
        let r = p.feasibility_screen(&[a.clone()]).unwrap();
        assert_eq!(r.verdict, Verdict::UnknownFeasible);
        assert_eq!(r.totals[0], 0.0);
        let r = p.feasibility_screen(&[a.add(&b).unwrap()]).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!((r.totals[0] - 2.0).abs() < 1e-12);
        let r = p.feasibility_screen(&[a.sub(&b).unwrap()]).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!((r.totals[0] + 2.0).abs() < 1e-12);
        assert!(matches!(p.feasibility_screen(&[random(&g, 2, 15)]), Err(Error::NotClosed { .. })));
    }

    #[test]
    fn rejects_bad_sets() {
        let g = grid();
        let z = random(&g, 1, 16);
        assert!(QuadraticConstraintSet::new(
            &g,
            vec![2],
            vec![ConstraintTerm { constraint: 0, left: 0, right: 0, coefficient: z }],
            EvalMode::Cup
        )
        .is_err());
        let p = QuadraticConstraintSet::pfaffian(&g, EvalMode::Collocation).unwrap();
        assert!(p.evaluate(&[random(&g, 1, 17)]).is_err());
        let g3 = TorusGrid::new(GridSpec::unit(3, 3)).unwrap();
        assert!(QuadraticConstraintSet::pfaffian(&g3, EvalMode::Cup).is_err());
    }
}
