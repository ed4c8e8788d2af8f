//! Ball-energy density curves `e^{lambda r^2} r^{2p-n} int_{B_r} |z|^2 dv`,
//! their monotonicity, and sampled Morrey-norm estimates.
//!
//! Balls are coordinate balls in the periodic chart (wrapped distance) and
//! are integrated against the metric volume. Each n-cell contributes its
//! midpoint value of `|z|^2` times its measure times the fraction of the cell
//! inside the ball. Fractions come from adaptive subdivision; leaves cut by
//! the sphere use the exact volume of the leaf box below the local tangent
//! hyperplane, shifted by the mean sag of the sphere over the leaf.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::grid::{FormField, TorusGrid};
use crate::io::format_exact;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureOptions {
    /// Subdivision levels for cells cut by the sphere (each level halves every side).
    pub depth: usize,
    /// Smallest admissible radius in units of the largest grid spacing.
    pub min_radius_cells: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { depth: 2, min_radius_cells: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    /// `int_{B_r} |z|^2 dv` at each radius.
    pub energies: Vec<f64>,
    /// `e^{lambda r^2} r^{2p-n}` times the energy.
    pub values: Vec<f64>,
    pub lambda: f64,
    pub degree: usize,
    pub dim: usize,
    /// Set when the theorem's hypotheses (constant coefficients, homogeneous
    /// constraint) are not checked for this field.
    pub caveat: Option<String>,
}

impl DensityCurve {
    /// Same energies reweighted with another `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let exp = 2.0 * self.degree as f64 - self.dim as f64;
        let values = self.radii.iter().zip(&self.energies).map(|(r, e)| (lambda * r * r).exp() * r.powf(exp) * e).collect();
        Self { values, lambda, ..self.clone() }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "r,value")?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            writeln!(f, "{},{}", format_exact(*r), format_exact(*v))?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Wrapped-distance extremes of the interval `[lo, hi]` (relative to the
/// center) on a circle of length `period`.
fn wrapped_range(lo: f64, hi: f64, period: f64) -> (f64, f64) {
    let w = |t: f64| {
        let m = t.rem_euclid(period);
        m.min(period - m)
    };
    let k_lo = (lo / period).ceil();
    let near = if k_lo * period <= hi { 0.0 } else { w(lo).min(w(hi)) };
    let k_half = ((lo - 0.5 * period) / period).ceil();
    let far = if k_half * period + 0.5 * period <= hi { 0.5 * period } else { w(lo).max(w(hi)) };
    (near, far)
}

/// Volume fraction of `{sum_i a_i U_i <= s}` for independent uniform `U_i` on `[0, 1]`.
fn uniform_sum_cdf(widths: &[f64], s: f64) -> f64 {
    let amax = widths.iter().fold(0.0f64, |m, a| m.max(*a));
    if amax == 0.0 {
        return if s >= 0.0 { 1.0 } else { 0.0 };
    }
    let a: Vec<f64> = widths.iter().copied().filter(|w| *w > 1e-9 * amax).collect();
    let total: f64 = a.iter().sum();
    if s <= 0.0 {
        return 0.0;
    }
    if s >= total {
        return 1.0;
    }
    let d = a.len() as i32;
    let mut acc = 0.0;
    for subset in 0..(1usize << a.len()) {
        let shift: f64 = (0..a.len()).filter(|i| subset & (1 << i) != 0).map(|i| a[i]).sum();
        let t = s - shift;
        if t > 0.0 {
            let sign = if subset.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * t.powi(d);
        }
    }
    let fact: f64 = (1..=d).map(|k| k as f64).product();
    (acc / (fact * a.iter().product::<f64>())).clamp(0.0, 1.0)
}

struct Ball<'a> {
    radius: f64,
    periods: &'a [f64],
}

impl Ball<'_> {
    /// Fraction of the box `[lo, lo + size]` (relative to the center) inside the ball.
    fn fraction(&self, lo: &[f64], size: &[f64], depth: usize) -> f64 {
        let n = lo.len();
        let (mut near, mut far) = (0.0, 0.0);
        let mut straddles_half = false;
        for i in 0..n {
            let (a, b) = wrapped_range(lo[i], lo[i] + size[i], self.periods[i]);
            near += a * a;
            far += b * b;
            straddles_half |= b >= 0.5 * self.periods[i] * (1.0 - 1e-12);
        }
        let r2 = self.radius * self.radius;
        if far <= r2 {
            return 1.0;
        }
        if near > r2 {
            return 0.0;
        }
        if depth > 0 {
            let half: Vec<f64> = size.iter().map(|s| 0.5 * s).collect();
            let mut acc = 0.0;
            let mut child = vec![0.0; n];
            for corner in 0..(1usize << n) {
                for i in 0..n {
                    child[i] = lo[i] + if corner & (1 << i) != 0 { half[i] } else { 0.0 };
                }
                acc += self.fraction(&child, &half, depth - 1);
            }
            return acc / (1usize << n) as f64;
        }
        // Leaf: midpoint test near the antipodal seam, tangent halfspace elsewhere.
        let mid: Vec<f64> = (0..n)
            .map(|i| {
                let m = (lo[i] + 0.5 * size[i]).rem_euclid(self.periods[i]);
                if m > 0.5 * self.periods[i] {
                    m - self.periods[i]
                } else {
                    m
                }
            })
            .collect();
        let dist = mid.iter().map(|x| x * x).sum::<f64>().sqrt();
        if straddles_half || dist == 0.0 {
            return if dist <= self.radius { 1.0 } else { 0.0 };
        }
        // Box in nearest-image coordinates, reflected so the normal is nonnegative.
        // |x| = dist + n.d + |d_perp|^2 / (2 dist) + ..., and the quadratic term
        // is replaced by its mean over the box.
        let mut widths = vec![0.0; n];
        let mut base = 0.0;
        let mut sag = 0.0;
        for i in 0..n {
            let nrm = mid[i] / dist;
            let lo_i = mid[i] - 0.5 * size[i];
            widths[i] = nrm.abs() * size[i];
            base += if nrm >= 0.0 { nrm * lo_i } else { nrm * (lo_i + size[i]) };
            sag += size[i] * size[i] * (1.0 - nrm * nrm) / 24.0;
        }
        uniform_sum_cdf(&widths, self.radius - sag / dist - base)
    }
}

fn check_center(grid: &TorusGrid, center: &[f64]) -> Result<()> {
    if center.len() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), found: center.len() });
    }
    if !center.iter().all(|c| c.is_finite()) {
        return contract("center must be finite");
    }
    Ok(())
}

/// `int_{B_r(center)} |z|^2 dv` for each radius, without resolution checks.
pub fn ball_energies(z: &FormField<f64>, center: &[f64], radii: &[f64], depth: usize) -> Result<Vec<f64>> {
    let g = z.grid();
    check_center(g, center)?;
    let n = g.dim();
    let full = (1usize << n) - 1;
    let h = g.spacing()[..n].to_vec();
    let periods = g.periods();
    let meas = g.measures(n);
    let dens: Vec<f64> = z.values().iter().map(|v| v.norm_sq()).collect();
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let ball = Ball { radius: r, periods };
        let mut total = 0.0;
        let mut lo = vec![0.0; n];
        for v in 0..g.n_vertices() {
            if dens[v] == 0.0 {
                continue;
            }
            let c = g.vertex_coords(v);
            for i in 0..n {
                // Lower corner relative to the center, nearest image of the cell center.
                let mid = (c[i] as f64 + 0.5) * h[i] - center[i];
                let m = mid - periods[i] * (mid / periods[i]).round();
                lo[i] = m - 0.5 * h[i];
            }
            let frac = ball.fraction(&lo, &h, depth);
            if frac > 0.0 {
                total += frac * dens[v] * meas[g.cell_index(full, v)];
            }
        }
        out.push(total);
    }
    Ok(out)
}

/// Density curve of `z` (a `degree`-form field) around `center`.
pub fn density_curve(
    z: &FormField<f64>,
    degree: usize,
    center: &[f64],
    radii: &[f64],
    lambda: f64,
    opts: &QuadratureOptions,
) -> Result<DensityCurve> {
    let g = z.grid();
    let n = g.dim();
    if degree > n {
        return Err(Error::DegreeOutOfRange { degree, dim: n });
    }
    if !lambda.is_finite() {
        return contract("lambda must be finite");
    }
    let minimum = opts.min_radius_cells * g.spacing()[..n].iter().fold(0.0f64, |m, h| m.max(*h));
    for (k, &r) in radii.iter().enumerate() {
        if !(r >= minimum) {
            return Err(Error::UnresolvableRadius { radius: r, minimum });
        }
        if k > 0 && !(r > radii[k - 1]) {
            return contract("radii must be strictly increasing");
        }
    }
    let energies = ball_energies(z, center, radii, opts.depth)?;
    let curve = DensityCurve {
        center: center.to_vec(),
        radii: radii.to_vec(),
        energies,
        values: Vec::new(),
        lambda,
        degree,
        dim: n,
        caveat: None,
    };
    Ok(curve.with_lambda(lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub monotone: bool,
    /// Largest `(value(sigma) - value(tau)) / value(sigma)` over `sigma < tau`, clipped at 0.
    pub worst_violation: f64,
    /// Radii `(sigma, tau)` realizing the worst violation.
    pub worst_pair: Option<(f64, f64)>,
    pub ripple: f64,
}

/// Pairwise check `value(tau) >= value(sigma) - ripple * value(sigma)` for `tau > sigma`.
pub fn monotonicity_check(curve: &DensityCurve, ripple: f64) -> MonotonicityVerdict {
    let v = &curve.values;
    let mut worst = 0.0f64;
    let mut pair = None;
    // The running maximum of earlier values gives the worst partner for each tau.
    let mut best: Option<(f64, usize)> = None;
    for t in 0..v.len() {
        if let Some((vs, s)) = best {
            if vs > 0.0 {
                let gap = (vs - v[t]) / vs;
                if gap > worst {
                    worst = gap;
                    pair = Some((curve.radii[s], curve.radii[t]));
                }
            }
        }
        if best.map_or(true, |(vs, _)| v[t] > vs) {
            best = Some((v[t], t));
        }
    }
    MonotonicityVerdict { monotone: worst <= ripple, worst_violation: worst, worst_pair: pair, ripple }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    /// Worst violation over all centers.
    pub worst_violation: f64,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub entries: Vec<SweepEntry>,
    /// Smallest swept `lambda` giving a monotone curve at every center.
    pub smallest_monotone: Option<f64>,
}

/// Evaluates the density curves once per center and reweights them for each `lambda`.
pub fn lambda_sweep(
    z: &FormField<f64>,
    degree: usize,
    centers: &[Vec<f64>],
    radii: &[f64],
    lambdas: &[f64],
    ripple: f64,
    opts: &QuadratureOptions,
) -> Result<LambdaSweep> {
    let curves = centers.iter().map(|c| density_curve(z, degree, c, radii, 0.0, opts)).collect::<Result<Vec<_>>>()?;
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let entries: Vec<SweepEntry> = sorted
        .iter()
        .map(|&lambda| {
            let worst =
                curves.iter().map(|c| monotonicity_check(&c.with_lambda(lambda), ripple).worst_violation).fold(0.0f64, f64::max);
            SweepEntry { lambda, worst_violation: worst, monotone: worst <= ripple }
        })
        .collect();
    let smallest_monotone = entries.iter().find(|e| e.monotone).map(|e| e.lambda);
    Ok(LambdaSweep { entries, smallest_monotone })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorreyOptions {
    /// Centers form the lattice `j * L_i / k`, `j < k`, on each axis.
    pub centers_per_axis: usize,
    /// Radii `r_max 2^{-j}`, `j = 0..=levels`, skipping those below the resolution limit.
    pub levels: usize,
    pub quadrature: QuadratureOptions,
}

impl Default for MorreyOptions {
    fn default() -> Self {
        Self { centers_per_axis: 2, levels: 4, quadrature: QuadratureOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorreyEstimate {
    pub integrability: f64,
    pub mu: f64,
    /// `sup (r^{-mu} int_{B_r} |z|^2)^{1/2}` over the samples.
    pub estimate: f64,
    pub argmax_center: Vec<f64>,
    pub argmax_radius: f64,
    pub centers: usize,
    pub radii: Vec<f64>,
    pub description: String,
}

/// Sampled Morrey norm of `z` with exponent `mu`.
pub fn morrey_norm(z: &FormField<f64>, mu: f64, opts: &MorreyOptions) -> Result<MorreyEstimate> {
    if !(mu >= 0.0) {
        return contract("Morrey exponent must be nonnegative");
    }
    if opts.centers_per_axis == 0 {
        return contract("centers_per_axis must be positive");
    }
    let g = z.grid();
    let n = g.dim();
    let h = &g.spacing()[..n];
    let p = g.periods();
    // Smallest radius whose ball covers the whole torus.
    let r_max = (0..n).map(|i| (0.5 * p[i] + h[i]).powi(2)).sum::<f64>().sqrt();
    let minimum = opts.quadrature.min_radius_cells * h.iter().fold(0.0f64, |m, x| m.max(*x));
    let radii: Vec<f64> = (0..=opts.levels).rev().map(|j| r_max * 0.5f64.powi(j as i32)).filter(|r| *r >= minimum).collect();
    let k = opts.centers_per_axis;
    let total_centers = k.pow(n as u32);
    let mut best = (0.0f64, vec![0.0; n], 0.0);
    for idx in 0..total_centers {
        let mut rest = idx;
        let center: Vec<f64> = (0..n)
            .map(|i| {
                let j = rest % k;
                rest /= k;
                j as f64 * p[i] / k as f64
            })
            .collect();
        let energies = ball_energies(z, &center, &radii, opts.quadrature.depth)?;
        for (r, e) in radii.iter().zip(energies) {
            let val = (r.powf(-mu) * e).sqrt();
            if val > best.0 {
                best = (val, center.clone(), *r);
            }
        }
    }
    Ok(MorreyEstimate {
        integrability: 2.0,
        mu,
        estimate: best.0,
        argmax_center: best.1,
        argmax_radius: best.2,
        centers: total_centers,
        description: format!("{k}^{n} center lattice, {} dyadic radii from {r_max:.6}", radii.len()),
        radii,
    })
}

#[cfg(test)]
mod tests;
