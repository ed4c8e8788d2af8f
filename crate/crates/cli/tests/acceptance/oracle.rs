//! Dense projected-gradient minimizer used to cross-check the augmented
//! Lagrangian solver on small grids.
//!
//! With `V` a weighted-orthonormal basis of the exact 2-cochains and `h`
//! harmonic, `z = h + V u` has energy `|h|^2 + |u|^2`, so the problem becomes
//! `min |u|^2` subject to `P(h + V u) = 0` in plain Euclidean coordinates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlharm::constraint::QuadraticConstraintSet;
use nlharm::Cochain;

pub struct OracleResult {
    pub energy: f64,
    pub constraint: f64,
    /// `|tangent part of grad| / |grad|` at the final iterate.
    pub stationarity: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    h: &'a Cochain<f64>,
    set: &'a QuadraticConstraintSet,
    basis: DMatrix<f64>,
}

impl Problem<'_> {
    fn z(&self, u: &DVector<f64>) -> Cochain<f64> {
        let v = &self.basis * u;
        let vals = self.h.values().iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        Cochain::from_values(self.h.grid(), 2, vals).unwrap()
    }

    fn constraint(&self, u: &DVector<f64>) -> DVector<f64> {
        let r = self.set.evaluate(&[self.z(u)]).unwrap();
        DVector::from_vec(r.values[0].clone())
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let der = self.set.derivative(&[self.z(u)]).unwrap();
        let g = self.h.grid();
        let cols: Vec<DVector<f64>> = (0..self.basis.ncols())
            .map(|j| {
                let c = Cochain::from_values(g, 2, self.basis.column(j).iter().cloned().collect()).unwrap();
                DVector::from_vec(der.apply(&[c]).unwrap().remove(0))
            })
            .collect();
        DMatrix::from_columns(&cols)
    }

    /// Minimum-norm Newton steps back onto `P = 0`.
    fn retract(&self, mut u: DVector<f64>, tol: f64) -> Option<DVector<f64>> {
        for _ in 0..30 {
            let c = self.constraint(&u);
            if c.amax() <= tol {
                return Some(u);
            }
            let j = self.jacobian(&u);
            let svd = j.svd(true, true);
            let eps = 1e-10 * svd.singular_values.max();
            let step = svd.solve(&c, eps).ok()?;
            u -= step;
        }
        (self.constraint(&u).amax() <= tol).then_some(u)
    }

    /// Multiplier estimate `J^T lam ~ grad` and the tangent residual.
    fn multiplier(&self, j: &DMatrix<f64>, grad: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let jt = j.transpose();
        let svd = jt.clone().svd(true, true);
        let eps = 1e-10 * svd.singular_values.max();
        let lam = svd.solve(grad, eps).unwrap();
        let t = grad - &jt * &lam;
        (lam, t)
    }

    /// `sum_k lam_k Hess c_k`, exact because each `c_k` is quadratic.
    fn constraint_hessian(&self, lam: &DVector<f64>) -> DMatrix<f64> {
        let g = self.h.grid();
        let weights = vec![lam.iter().cloned().collect::<Vec<f64>>()];
        let cols: Vec<DVector<f64>> = (0..self.basis.ncols())
            .map(|j| {
                let v = Cochain::from_values(g, 2, self.basis.column(j).iter().cloned().collect()).unwrap();
                let der = self.set.derivative(&[v]).unwrap();
                let adj = der.adjoint(&weights).unwrap().remove(0);
                self.basis.tr_mul(&DVector::from_column_slice(adj.values()))
            })
            .collect();
        let m = DMatrix::from_columns(&cols);
        (&m + m.transpose()) * 0.5
    }

    /// Stationarity `|grad - J^T lam| / |grad|` at a feasible `u`.
    fn stationarity(&self, u: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let grad = u * 2.0;
        let j = self.jacobian(u);
        let (lam, t) = self.multiplier(&j, &grad);
        let s = if grad.norm() > 0.0 { t.norm() / grad.norm() } else { 0.0 };
        (s, lam, t, j)
    }
}

/// Weighted-orthonormal basis of `d(C^1)` in raw 2-cochain coordinates.
fn exact_basis(h: &Cochain<f64>) -> DMatrix<f64> {
    let g = h.grid();
    let (n1, n2) = (g.num_cells(1), g.num_cells(2));
    let mut d = DMatrix::zeros(n2, n1);
    let mut e = vec![0.0; n1];
    for j in 0..n1 {
        e[j] = 1.0;
        let col = g.coboundary_values(1, &e).unwrap();
        d.set_column(j, &DVector::from_vec(col));
        e[j] = 0.0;
    }
    let w = g.star_weights(2);
    let sw = DVector::from_iterator(n2, w.iter().map(|x| x.sqrt()));
    let m = DMatrix::from_fn(n2, n1, |i, j| sw[i] * d[(i, j)]);
    let eig = SymmetricEigen::new(m.transpose() * &m);
    let top = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..n1).filter(|&k| eig.eigenvalues[k] > 1e-10 * top).collect();
    let mut basis = DMatrix::zeros(n2, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let col = &m * eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt();
        for i in 0..n2 {
            basis[(i, c)] = col[i] / sw[i];
        }
    }
    basis
}

/// Stationarity below which Newton steps are attempted.
const NEWTON_SWITCH: f64 = 1e-3;

/// Best local minimum over a start at `h` and `starts` seeded random starts.
/// The problem is not convex, so a single descent can stop at a higher minimum.
pub fn minimize(h: &Cochain<f64>, set: &QuadraticConstraintSet, starts: usize, seed: u64, max_iter: usize) -> Vec<OracleResult> {
    let prob = Problem { h, set, basis: exact_basis(h) };
    let r = prob.basis.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![descend(&prob, DVector::zeros(r), max_iter)];
    for _ in 0..starts {
        let u0 = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0)) * (START_RADIUS / (r as f64).sqrt());
        out.push(descend(&prob, u0, max_iter));
    }
    out
}

/// Norm of the random starting offsets in the exact directions.
const START_RADIUS: f64 = 0.3;

fn descend(prob: &Problem, u0: DVector<f64>, max_iter: usize) -> OracleResult {
    let tol = 1e-12;
    let e_h = prob.h.norm_sq();
    let r = prob.basis.ncols();
    let Some(mut u) = prob.retract(u0, tol) else {
        return OracleResult { energy: f64::INFINITY, constraint: f64::INFINITY, stationarity: f64::INFINITY, iterations: 0 };
    };
    let (mut stationarity, mut lam, mut t, mut j) = prob.stationarity(&u);
    let mut iterations = 0;
    while iterations < max_iter && stationarity > 1e-11 {
        iterations += 1;
        // Newton steps on the KKT system only once near a minimizer, and only
        // if they lower stationarity without raising the energy: unguarded
        // Newton happily converges to saddle points of the constrained energy.
        let e0 = u.norm_squared();
        if stationarity < NEWTON_SWITCH {
            let hl = DMatrix::<f64>::identity(r, r) * 2.0 - prob.constraint_hessian(&lam);
            let m = j.nrows();
            let mut kkt = DMatrix::zeros(r + m, r + m);
            kkt.view_mut((0, 0), (r, r)).copy_from(&hl);
            kkt.view_mut((0, r), (r, m)).copy_from(&(-j.transpose()));
            kkt.view_mut((r, 0), (m, r)).copy_from(&j);
            let mut rhs = DVector::zeros(r + m);
            rhs.rows_mut(0, r).copy_from(&(-t.clone()));
            let svd = kkt.svd(true, true);
            let eps = 1e-12 * svd.singular_values.max();
            let newton = svd.solve(&rhs, eps).ok().map(|x| x.rows(0, r).into_owned());
            if let Some(next) = newton.and_then(|du| prob.retract(&u + du, tol)) {
                let cand = prob.stationarity(&next);
                if cand.0 < stationarity && next.norm_squared() <= e0 * (1.0 + 1e-13) {
                    u = next;
                    (stationarity, lam, t, j) = cand;
                    continue;
                }
            }
        }
        let mut alpha = 0.5;
        let mut moved = false;
        while alpha > 1e-6 {
            if let Some(next) = prob.retract(&u - &t * alpha, tol) {
                if next.norm_squared() < e0 {
                    u = next;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
        (stationarity, lam, t, j) = prob.stationarity(&u);
    }
    OracleResult { energy: e_h + u.norm_squared(), constraint: prob.constraint(&u).amax(), stationarity, iterations }
}
