//! Hodge Laplacians, conjugate-gradient solves, harmonic representatives,
//! Hodge decomposition and Betti numbers on a [`TorusGrid`].
//!
//! All inner products are the star-weighted ones, under which the discrete
//! Laplacian is self-adjoint and positive semidefinite.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::exterior::MAX_DIM;
use crate::grid::{codifferential_values, laplacian_op, Cochain, GridOperator, TorusGrid};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HodgeSolveOptions {
    /// Relative residual target for every CG solve.
    pub cg_tolerance: f64,
    pub max_iterations: usize,
    /// Project the harmonic subspace out of right-hand sides and residuals.
    pub deflation: bool,
}

impl Default for HodgeSolveOptions {
    fn default() -> Self {
        Self { cg_tolerance: 1e-10, max_iterations: 5000, deflation: true }
    }
}

impl HodgeSolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tolerance > 0.0 && self.cg_tolerance < 1.0) {
            return contract(format!("cg tolerance must lie in (0, 1), got {}", self.cg_tolerance));
        }
        if self.max_iterations == 0 {
            return contract("max_iterations must be at least 1");
        }
        Ok(())
    }
}

/// Laplacian `Delta_k = delta d + d delta`.
pub fn laplacian(grid: &Arc<TorusGrid>, k: usize) -> Result<GridOperator> {
    laplacian_op(grid, k)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub trace: Vec<f64>,
}

/// Harmonic representative together with its potential: `h = f - d alpha`.
#[derive(Clone, Debug)]
pub struct HarmonicRep<T> {
    pub harmonic: Cochain<T>,
    pub potential: Option<Cochain<T>>,
    /// `max|dh| / max|f|`.
    pub closed_residual: f64,
    /// `|delta h|_W / |f|_W`, scaled by the inverse grid spacing.
    pub coclosed_residual: f64,
    pub stats: CgStats,
}

#[derive(Clone, Debug)]
pub struct Decomposition<T> {
    pub exact: Cochain<T>,
    pub coexact: Cochain<T>,
    pub harmonic: Cochain<T>,
    /// `|c - (exact + coexact + harmonic)|_W / |c|_W`.
    pub reconstruction_residual: f64,
    /// Largest pairwise `|<a, b>_W| / |c|_W^2` among the three parts.
    pub orthogonality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BettiReport {
    pub degree: usize,
    pub betti: usize,
    pub probes: usize,
    /// Gram eigenvalues of the projected probes, descending, relative to the largest.
    pub relative_spectrum: Vec<f64>,
}

/// Relative tolerance on `max|df| / max|f|` for accepting a closed input.
pub const CLOSED_TOLERANCE: f64 = 1e-10;

/// Relative threshold separating harmonic directions from numerical noise.
pub const BETTI_GAP: f64 = 1e-6;
/// Below this relative size an eigenvalue is unambiguously noise.
pub const BETTI_NOISE: f64 = 1e-10;

/// Solver bound to one grid, caching orthonormal harmonic bases per degree.
#[derive(Debug)]
pub struct HodgeSolver<T> {
    grid: Arc<TorusGrid>,
    opts: HodgeSolveOptions,
    bases: [OnceLock<Vec<Cochain<T>>>; MAX_DIM + 1],
}

impl<T: Real> HodgeSolver<T> {
    pub fn new(grid: &Arc<TorusGrid>, opts: HodgeSolveOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self { grid: grid.clone(), opts, bases: Default::default() })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn options(&self) -> &HodgeSolveOptions {
        &self.opts
    }

    fn check(&self, c: &Cochain<T>) -> Result<()> {
        if !(Arc::ptr_eq(&self.grid, c.grid()) || *self.grid == **c.grid()) {
            return Err(Error::GridMismatch("cochain is not on the solver grid".into()));
        }
        Ok(())
    }

    /// Solve `Delta_k x = b` on the complement of the harmonic space.
    pub fn solve_laplacian(&self, b: &Cochain<T>, x0: Option<&Cochain<T>>) -> Result<(Cochain<T>, CgStats)> {
        self.check(b)?;
        let k = b.degree();
        let basis = if self.opts.deflation { self.harmonic_basis(k)? } else { &[][..] };
        let op = laplacian_op(&self.grid, k)?;
        cg(&op, b, x0, basis, self.opts.cg_tolerance, self.opts.max_iterations)
    }

    /// W-orthonormal basis of harmonic k-cochains, from the harmonic
    /// representatives of the coordinate forms `dx^S`.
    pub fn harmonic_basis(&self, k: usize) -> Result<&[Cochain<T>]> {
        if k > self.grid.dim() {
            return Err(Error::DegreeOutOfRange { degree: k, dim: self.grid.dim() });
        }
        if let Some(b) = self.bases[k].get() {
            return Ok(b);
        }
        let g = &self.grid;
        let h = g.spacing();
        let mut raw = Vec::new();
        for &mask in g.blocks(k) {
            let vol: f64 = (0..g.dim()).filter(|i| mask & (1 << i) != 0).map(|i| h[i]).product();
            let f = Cochain::coordinate_form(g, mask, T::one(), T::lit(vol))?;
            raw.push(if k == 0 { f } else { self.harmonic_part_of_closed(&f)?.0 });
        }
        let basis = orthonormalize(raw);
        let _ = self.bases[k].set(basis);
        Ok(self.bases[k].get().expect("just set"))
    }

    /// `f - d alpha` with `Delta_{k-1} alpha = delta f`.
    fn harmonic_part_of_closed(&self, f: &Cochain<T>) -> Result<(Cochain<T>, Option<Cochain<T>>, CgStats)> {
        let k = f.degree();
        if k == 0 {
            // Closed 0-cochains are constant on a connected torus.
            let proj = project(f, self.harmonic_basis(0)?);
            return Ok((proj, None, CgStats::default()));
        }
        let rhs = Cochain::from_values(&self.grid, k - 1, codifferential_values(&self.grid, k, f.values())?)?;
        let (alpha, stats) = self.solve_laplacian(&rhs, None)?;
        let h = f.sub(&alpha.d()?)?;
        Ok((h, Some(alpha), stats))
    }

    /// Harmonic representative of the class of a closed cochain.
    pub fn harmonic_representative(&self, f: &Cochain<T>) -> Result<HarmonicRep<T>> {
        self.check(f)?;
        let scale = f.max_abs().to_f64_lossy();
        if f.degree() < self.grid.dim() {
            let df = f.d()?.max_abs().to_f64_lossy();
            // Closedness is judged at 1e-10, or a few ulps for single precision.
            let tol = CLOSED_TOLERANCE.max(64.0 * T::epsilon().to_f64_lossy());
            if df > tol * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::NotClosed { residual: df / scale.max(f64::MIN_POSITIVE) });
            }
        }
        let (h, potential, stats) = self.harmonic_part_of_closed(f)?;
        let closed_residual =
            if h.degree() < self.grid.dim() { h.d()?.max_abs().to_f64_lossy() / scale.max(f64::MIN_POSITIVE) } else { 0.0 };
        let coclosed_residual = if h.degree() > 0 {
            let dh =
                Cochain::from_values(&self.grid, h.degree() - 1, codifferential_values(&self.grid, h.degree(), h.values())?)?;
            dh.norm().to_f64_lossy() / (f.norm().to_f64_lossy() * d_norm(&self.grid)).max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        Ok(HarmonicRep { harmonic: h, potential, closed_residual, coclosed_residual, stats })
    }

    /// W-orthogonal projection onto the cached harmonic basis.
    pub fn project_harmonic(&self, c: &Cochain<T>) -> Result<Cochain<T>> {
        self.check(c)?;
        Ok(project(c, self.harmonic_basis(c.degree())?))
    }

    /// Remove the exact and harmonic parts of `y`, leaving `dy` untouched up
    /// to rounding: `y - d alpha - proj(y)` with `Delta alpha = delta y`.
    pub fn gauge_fix(&self, y: &Cochain<T>) -> Result<Cochain<T>> {
        self.check(y)?;
        let g = &self.grid;
        let k = y.degree();
        let mut out = y.sub(&self.project_harmonic(y)?)?;
        if k > 0 {
            let rhs = Cochain::from_values(g, k - 1, codifferential_values(g, k, out.values())?)?;
            let alpha = self.solve_laplacian(&rhs, None)?.0;
            out = out.sub(&alpha.d()?)?;
        }
        Ok(out)
    }

    /// `c = d alpha + delta beta + h`.
    pub fn decompose(&self, c: &Cochain<T>) -> Result<Decomposition<T>> {
        self.check(c)?;
        let (exact, coexact) = self.exact_coexact(c)?;
        let harmonic = self.project_harmonic(c)?;
        let sum = exact.add(&coexact)?.add(&harmonic)?;
        let cn = c.norm().to_f64_lossy().max(f64::MIN_POSITIVE);
        let reconstruction_residual = c.sub(&sum)?.norm().to_f64_lossy() / cn;
        let parts = [&exact, &coexact, &harmonic];
        let mut orthogonality: f64 = 0.0;
        for i in 0..3 {
            for j in i + 1..3 {
                orthogonality = orthogonality.max(parts[i].inner(parts[j])?.to_f64_lossy().abs() / (cn * cn));
            }
        }
        Ok(Decomposition { exact, coexact, harmonic, reconstruction_residual, orthogonality })
    }

    fn exact_coexact(&self, c: &Cochain<T>) -> Result<(Cochain<T>, Cochain<T>)> {
        let g = &self.grid;
        let k = c.degree();
        let exact = if k > 0 {
            let rhs = Cochain::from_values(g, k - 1, codifferential_values(g, k, c.values())?)?;
            self.solve_laplacian(&rhs, None)?.0.d()?
        } else {
            Cochain::zeros(g, k)?
        };
        let coexact = if k < g.dim() {
            let beta = self.solve_laplacian(&c.d()?, None)?.0;
            Cochain::from_values(g, k, codifferential_values(g, k + 1, beta.values())?)?
        } else {
            Cochain::zeros(g, k)?
        };
        Ok((exact, coexact))
    }

    /// Dimension of the harmonic k-cochains by rank counting on projected
    /// random probes. Independent of the cached coordinate basis in degree k.
    pub fn betti(&self, k: usize) -> Result<BettiReport> {
        let g = &self.grid;
        if k > g.dim() {
            return Err(Error::DegreeOutOfRange { degree: k, dim: g.dim() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x6265_7474_69 + k as u64);
        let mut probes = 8usize;
        let mut parts: Vec<Cochain<T>> = Vec::new();
        loop {
            while parts.len() < probes {
                let vals = (0..g.num_cells(k)).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
                let c = Cochain::from_values(g, k, vals)?;
                let (e, co) = self.exact_coexact(&c)?;
                let h = c.sub(&e)?.sub(&co)?;
                let n = c.norm();
                parts.push(h.scale(T::one() / n));
            }
            let m = parts.len();
            let mut gram = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    let v = parts[i].inner(&parts[j])?.to_f64_lossy();
                    gram[(i, j)] = v;
                    gram[(j, i)] = v;
                }
            }
            let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().cloned().collect();
            eig.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
            let top = eig[0];
            if !(top > 0.0) {
                return Ok(BettiReport { degree: k, betti: 0, probes: m, relative_spectrum: vec![0.0; m] });
            }
            let rel: Vec<f64> = eig.iter().map(|&l| l / top).collect();
            if let Some(&bad) = rel.iter().find(|&&r| (BETTI_NOISE..BETTI_GAP).contains(&r)) {
                return Err(Error::AmbiguousGap(format!(
                    "degree {k}: relative eigenvalue {bad:e} lies between {BETTI_NOISE:e} and {BETTI_GAP:e}; tighten the CG tolerance"
                )));
            }
            let rank = rel.iter().filter(|&&r| r >= BETTI_GAP).count();
            if rank < m {
                return Ok(BettiReport { degree: k, betti: rank, probes: m, relative_spectrum: rel });
            }
            if m >= 256 {
                return contract("harmonic space too large for probe counting");
            }
            probes *= 2;
        }
    }
}

/// Operator norm bound `sqrt(sum_i (2/h_i)^2)` of the coboundary in
/// orthonormal components; used to make residuals scale free.
pub fn d_norm(grid: &TorusGrid) -> f64 {
    grid.spacing().iter().map(|h| (2.0 / h).powi(2)).sum::<f64>().sqrt()
}

fn project<T: Real>(c: &Cochain<T>, basis: &[Cochain<T>]) -> Cochain<T> {
    let mut out = Cochain::zeros(c.grid(), c.degree()).expect("valid degree");
    for b in basis {
        let coef = c.inner(b).expect("same shape");
        out.axpy(coef, b).expect("same shape");
    }
    out
}

fn deflate<T: Real>(c: &mut Cochain<T>, basis: &[Cochain<T>]) {
    for b in basis {
        let coef = c.inner(b).expect("same shape");
        c.axpy(-coef, b).expect("same shape");
    }
}

/// Modified Gram-Schmidt in the W inner product, applied twice.
fn orthonormalize<T: Real>(mut vs: Vec<Cochain<T>>) -> Vec<Cochain<T>> {
    for _pass in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            deflate(v, done);
            let n = v.norm();
            *v = v.scale(T::one() / n);
        }
    }
    vs
}

/// Conjugate gradients for a W-self-adjoint positive semidefinite operator,
/// restricted to the W-orthogonal complement of `basis`.
pub fn cg<T: Real>(
    op: &GridOperator,
    b: &Cochain<T>,
    x0: Option<&Cochain<T>>,
    basis: &[Cochain<T>],
    tol: f64,
    max_iterations: usize,
) -> Result<(Cochain<T>, CgStats)> {
    let mut rhs = b.clone();
    deflate(&mut rhs, basis);
    let bn = rhs.norm().to_f64_lossy();
    let mut x = match x0 {
        Some(x) => {
            let mut x = x.clone();
            deflate(&mut x, basis);
            x
        }
        None => Cochain::zeros(b.grid(), b.degree())?,
    };
    if bn == 0.0 {
        return Ok((Cochain::zeros(b.grid(), b.degree())?, CgStats::default()));
    }
    let mut r = rhs.sub(&op.apply(&x)?)?;
    deflate(&mut r, basis);
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let mut trace = Vec::new();
    let mut rel = rr.to_f64_lossy().sqrt() / bn;
    trace.push(rel);
    let mut it = 0;
    while rel > tol {
        if it >= max_iterations {
            return Err(Error::NoConvergence { iterations: it, residual: rel, trace });
        }
        let ap = op.apply(&p)?;
        let pap = p.inner(&ap)?;
        if !(pap > T::zero()) {
            return Err(Error::NoConvergence { iterations: it, residual: rel, trace });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        deflate(&mut r, basis);
        let rr_new = r.norm_sq();
        let beta = rr_new / rr;
        rr = rr_new;
        p = r.add(&p.scale(beta))?;
        it += 1;
        rel = rr.to_f64_lossy().sqrt() / bn;
        trace.push(rel);
    }
    deflate(&mut x, basis);
    // Report the true residual rather than the recursively updated one.
    let true_rel = rhs.sub(&op.apply(&x)?)?.norm().to_f64_lossy() / bn;
    Ok((x, CgStats { iterations: it, relative_residual: true_rel, trace }))
}

/// Harmonic representative of a closed cochain with a fresh solver.
pub fn harmonic_representative<T: Real>(f: &Cochain<T>, opts: &HodgeSolveOptions) -> Result<Cochain<T>> {
    Ok(HodgeSolver::new(f.grid(), opts.clone())?.harmonic_representative(f)?.harmonic)
}

pub fn hodge_decompose<T: Real>(c: &Cochain<T>, opts: &HodgeSolveOptions) -> Result<(Cochain<T>, Cochain<T>, Cochain<T>)> {
    let d = HodgeSolver::new(c.grid(), opts.clone())?.decompose(c)?;
    Ok((d.exact, d.coexact, d.harmonic))
}

pub fn betti(grid: &Arc<TorusGrid>, k: usize, opts: &HodgeSolveOptions) -> Result<usize> {
    Ok(HodgeSolver::<f64>::new(grid, opts.clone())?.betti(k)?.betti)
}
