//! Pointwise exterior and Clifford algebra in dimension n <= 4.
//!
//! A [`MultiVector`] stores the 2^n coefficients of a mixed-degree form
//! `sum_I a_I e^I`. The coefficient of `e^{i_1 ... i_k}` (with
//! `i_1 < ... < i_k`, axes 0-based) lives at the bitmask index
//! `(1 << i_1) | ... | (1 << i_k)`. Every sign below is derived from the
//! single rule that `e^I` means the wedge of the axes of `I` in increasing
//! order; orientation is `e^{0 1 ... n-1}` positive.

use crate::error::{contract, Error, Result};
use crate::scalar::{sign, Real, Scalar};

pub const MAX_DIM: usize = 4;
const MAX_BLADES: usize = 1 << MAX_DIM;

/// Sign of `e^A ^ e^B` relative to `e^{A u B}` for disjoint masks.
#[inline]
pub fn wedge_sign(a: usize, b: usize) -> bool {
    let mut swaps = 0u32;
    let mut rest = b;
    while rest != 0 {
        let bit = rest.trailing_zeros();
        swaps += (a >> (bit + 1)).count_ones();
        rest &= rest - 1;
    }
    swaps % 2 == 1
}

/// Axis masks of cardinality `k` in lexicographic order of their sorted axis
/// lists, e.g. for n = 4, k = 2: 01, 02, 03, 12, 13, 23.
pub fn subsets(dim: usize, k: usize) -> Vec<usize> {
    fn rec(start: usize, dim: usize, left: usize, acc: usize, out: &mut Vec<usize>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..dim {
            rec(i + 1, dim, left - 1, acc | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    if k <= dim {
        rec(0, dim, k, 0, &mut out);
    }
    out
}

/// Sorted axes of a mask.
pub fn axes_of(mask: usize) -> Vec<usize> {
    (0..MAX_DIM).filter(|i| mask & (1 << i) != 0).collect()
}

pub fn mask_of(axes: &[usize]) -> usize {
    axes.iter().fold(0, |m, &a| m | (1 << a))
}

/// Human-readable 1-based label of a mask ("12" for e^{12}, "." for the empty set).
pub fn mask_label(mask: usize) -> String {
    if mask == 0 {
        return ".".to_string();
    }
    axes_of(mask).iter().map(|a| char::from(b'1' + *a as u8)).collect()
}

pub fn parse_mask_label(label: &str) -> Result<usize> {
    if label == "." {
        return Ok(0);
    }
    let mut mask = 0;
    for c in label.chars() {
        let d = c
            .to_digit(10)
            .filter(|d| (1..=MAX_DIM as u32).contains(d))
            .ok_or_else(|| Error::Parse(format!("bad axis label {label:?}")))?;
        let bit = 1 << (d - 1);
        if mask & bit != 0 {
            return Err(Error::Parse(format!("repeated axis in {label:?}")));
        }
        mask |= bit;
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiVector<T> {
    dim: usize,
    coeffs: [T; MAX_BLADES],
}

impl<T: Scalar> MultiVector<T> {
    pub fn zero(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self { dim, coeffs: [T::zero(); MAX_BLADES] }
    }

    pub fn scalar(dim: usize, value: T) -> Self {
        let mut m = Self::zero(dim);
        m.coeffs[0] = value;
        m
    }

    /// Basis blade `e^{axes}` (0-based axes, any order; the sign of the
    /// permutation is applied).
    pub fn basis(dim: usize, axes: &[usize]) -> Self {
        let mut m = Self::scalar(dim, T::one());
        for &a in axes {
            m = m.wedge_unchecked(&Self::from_mask(dim, 1 << a, T::one()));
        }
        m
    }

    pub fn from_mask(dim: usize, mask: usize, value: T) -> Self {
        let mut m = Self::zero(dim);
        m.coeffs[mask] = value;
        m
    }

    /// Covector `sum_i w_i e^i`.
    pub fn covector(w: &[T]) -> Self {
        let mut m = Self::zero(w.len());
        for (i, &wi) in w.iter().enumerate() {
            m.coeffs[1 << i] = wi;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        1 << self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coeff(&self, mask: usize) -> T {
        self.coeffs[mask]
    }

    pub fn set(&mut self, mask: usize, value: T) {
        assert!(mask < self.len());
        self.coeffs[mask] = value;
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs[..self.len()]
    }

    /// Top-degree coefficient (of `e^{1...n}`).
    pub fn top(&self) -> T {
        self.coeffs[self.len() - 1]
    }

    /// Degree-k part.
    pub fn grade(&self, k: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for mask in 0..self.len() {
            if mask.count_ones() as usize == k {
                out.coeffs[mask] = self.coeffs[mask];
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..self.len() {
            out.coeffs[i] += other.coeffs[i];
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..self.len() {
            out.coeffs[i] -= other.coeffs[i];
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for i in 0..self.len() {
            out.coeffs[i] *= s;
        }
        out
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    pub fn wedge(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(self.wedge_unchecked(other))
    }

    pub(crate) fn wedge_unchecked(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.dim);
        let len = self.len();
        for a in 0..len {
            let ca = self.coeffs[a];
            if ca == T::zero() {
                continue;
            }
            for b in 0..len {
                let cb = other.coeffs[b];
                if a & b != 0 || cb == T::zero() {
                    continue;
                }
                let term = ca * cb;
                if wedge_sign(a, b) {
                    out.coeffs[a | b] -= term;
                } else {
                    out.coeffs[a | b] += term;
                }
            }
        }
        out
    }

    /// Exterior multiplication by a single basis covector `e^axis` on the left.
    pub fn ext_basis(&self, axis: usize) -> Self {
        let bit = 1 << axis;
        let mut out = Self::zero(self.dim);
        for mask in 0..self.len() {
            if mask & bit != 0 {
                continue;
            }
            let c = self.coeffs[mask];
            // e^axis ^ e^mask: move axis past the smaller elements of mask.
            let neg = (mask & (bit - 1)).count_ones() % 2 == 1;
            out.coeffs[mask | bit] += sign::<T>(neg) * c;
        }
        out
    }

    /// Interior multiplication by the basis vector dual to `e^axis`.
    pub fn int_basis(&self, axis: usize) -> Self {
        let bit = 1 << axis;
        let mut out = Self::zero(self.dim);
        for mask in 0..self.len() {
            if mask & bit == 0 {
                continue;
            }
            let neg = (mask & (bit - 1)).count_ones() % 2 == 1;
            out.coeffs[mask ^ bit] += sign::<T>(neg) * self.coeffs[mask];
        }
        out
    }

    /// Interior product `i_v a` with a vector given by its components in the
    /// basis dual to `e^i`. Metric independent.
    pub fn interior(&self, v: &[T]) -> Result<Self> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: v.len() });
        }
        let mut out = Self::zero(self.dim);
        for (axis, &vi) in v.iter().enumerate() {
            if vi != T::zero() {
                out = out.add(&self.int_basis(axis).scale(vi));
            }
        }
        Ok(out)
    }

    /// Euclidean coefficient dot product (the induced inner product of an
    /// orthonormal coframe).
    pub fn dot(&self, other: &Self) -> T {
        let mut s = T::zero();
        for i in 0..self.len() {
            s += self.coeffs[i] * other.coeffs[i];
        }
        s
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    /// Orthonormal-frame Clifford multiplication `c(e^axis) = e(e^axis) - i(e_axis)`.
    pub fn clifford_basis(&self, axis: usize) -> Self {
        self.ext_basis(axis).sub(&self.int_basis(axis))
    }

    /// Orthonormal-frame `c-hat(e^axis) = e(e^axis) + i(e_axis)`.
    pub fn clifford_hat_basis(&self, axis: usize) -> Self {
        self.ext_basis(axis).add(&self.int_basis(axis))
    }

    /// Euclidean Hodge star, `*(e^1 ^ ... ^ e^k) = e^{k+1} ^ ... ^ e^n`.
    pub fn star_euclidean(&self) -> Self {
        let full = self.len() - 1;
        let mut out = Self::zero(self.dim);
        for j in 0..self.len() {
            let c = self.coeffs[j];
            if c == T::zero() {
                continue;
            }
            let k = full ^ j;
            out.coeffs[k] += sign::<T>(wedge_sign(j, k)) * c;
        }
        out
    }

    pub fn is_homogeneous(&self, k: usize) -> bool {
        (0..self.len()).all(|m| m.count_ones() as usize == k || self.coeffs[m] == T::zero())
    }

    /// `z_12 z_34 - z_13 z_24 + z_14 z_23` for a 2-form in dimension 4.
    pub fn pfaffian(&self) -> Result<T> {
        if self.dim != 4 {
            return contract(format!("pfaffian needs dim 4, got {}", self.dim));
        }
        if !self.is_homogeneous(2) {
            return contract("pfaffian needs a pure 2-form");
        }
        Ok(pfaffian_of(&self.coeffs))
    }

    /// Polarization of the Pfaffian: `Pf(z, v)` with `Pf(z, z) = Pf(z)`.
    pub fn pfaffian_bilinear(&self, other: &Self) -> Result<T> {
        self.check_dim(other)?;
        if self.dim != 4 || !self.is_homogeneous(2) || !other.is_homogeneous(2) {
            return contract("pfaffian_bilinear needs two 2-forms in dim 4");
        }
        let z = &self.coeffs;
        let v = &other.coeffs;
        let two = T::one() + T::one();
        let s = z[3] * v[12] + v[3] * z[12] - z[5] * v[10] - v[5] * z[10] + z[9] * v[6] + v[9] * z[6];
        Ok(s / two)
    }
}

#[inline]
fn pfaffian_of<T: Scalar>(z: &[T; MAX_BLADES]) -> T {
    z[3] * z[12] - z[5] * z[10] + z[9] * z[6]
}

impl<T: Real> MultiVector<T> {
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    /// Self-dual / anti-self-dual split of a 2-form in dimension 4 (Euclidean).
    pub fn sd_asd_split(&self) -> Result<(Self, Self)> {
        if self.dim != 4 || !self.is_homogeneous(2) {
            return contract("sd_asd_split needs a 2-form in dim 4");
        }
        let star = self.star_euclidean();
        let half = T::lit(0.5);
        Ok((self.add(&star).scale(half), self.sub(&star).scale(half)))
    }

    pub fn max_abs(&self) -> T {
        self.coeffs().iter().fold(T::zero(), |m, c| m.max(c.abs()))
    }
}

/// Pointwise inner product on vectors; covectors use its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProduct<T> {
    dim: usize,
    metric: [[T; MAX_DIM]; MAX_DIM],
    inverse: [[T; MAX_DIM]; MAX_DIM],
    diagonal: bool,
}

impl<T: Real> InnerProduct<T> {
    pub fn euclidean(dim: usize) -> Self {
        let diag = vec![T::one(); dim];
        Self::diagonal(&diag).expect("identity is positive definite")
    }

    pub fn diagonal(diag: &[T]) -> Result<Self> {
        let dim = diag.len();
        if !(1..=MAX_DIM).contains(&dim) {
            return contract(format!("dimension {dim} unsupported"));
        }
        if diag.iter().any(|d| !(*d > T::zero())) {
            return contract("diagonal metric must be positive");
        }
        let mut metric = [[T::zero(); MAX_DIM]; MAX_DIM];
        let mut inverse = metric;
        for i in 0..dim {
            metric[i][i] = diag[i];
            inverse[i][i] = T::one() / diag[i];
        }
        Ok(Self { dim, metric, inverse, diagonal: true })
    }

    /// General symmetric positive-definite metric, given row-major.
    pub fn general(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.len();
        if !(1..=MAX_DIM).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return contract("metric must be square with dim <= 4");
        }
        let mut metric = [[T::zero(); MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                metric[i][j] = rows[i][j];
            }
        }
        let tol = T::lit(1e-12) * (T::one() + metric.iter().flatten().fold(T::zero(), |m, x| m.max(x.abs())));
        for i in 0..dim {
            for j in 0..i {
                if (metric[i][j] - metric[j][i]).abs() > tol {
                    return contract("metric must be symmetric");
                }
            }
        }
        // Leading principal minors positive <=> positive definite.
        for k in 1..=dim {
            let idx: Vec<usize> = (0..k).collect();
            if !(minor(&metric, &idx, &idx) > T::zero()) {
                return contract("metric must be positive definite");
            }
        }
        let det = minor(&metric, &(0..dim).collect::<Vec<_>>(), &(0..dim).collect::<Vec<_>>());
        let mut inverse = [[T::zero(); MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                let rows_: Vec<usize> = (0..dim).filter(|&r| r != j).collect();
                let cols_: Vec<usize> = (0..dim).filter(|&c| c != i).collect();
                let cof = minor(&metric, &rows_, &cols_);
                inverse[i][j] = sign::<T>((i + j) % 2 == 1) * cof / det;
            }
        }
        let diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || metric[i][j] == T::zero()));
        Ok(Self { dim, metric, inverse, diagonal })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn det(&self) -> T {
        let all: Vec<usize> = (0..self.dim).collect();
        minor(&self.metric, &all, &all)
    }

    /// Metric dual `v^flat` as a covector multivector.
    pub fn flat(&self, v: &[T]) -> MultiVector<T> {
        let w: Vec<T> = (0..self.dim).map(|i| (0..self.dim).fold(T::zero(), |s, j| s + self.metric[i][j] * v[j])).collect();
        MultiVector::covector(&w)
    }

    /// Vector dual to a covector (reads the degree-1 part).
    pub fn sharp(&self, omega: &MultiVector<T>) -> Vec<T> {
        (0..self.dim).map(|i| (0..self.dim).fold(T::zero(), |s, j| s + self.inverse[i][j] * omega.coeff(1 << j))).collect()
    }

    /// Induced inner product of basis blades `<e^I, e^J>`.
    pub fn blade_product(&self, a: usize, b: usize) -> T {
        if a.count_ones() != b.count_ones() {
            return T::zero();
        }
        if self.diagonal {
            if a != b {
                return T::zero();
            }
            return axes_of(a).iter().fold(T::one(), |p, &i| p * self.inverse[i][i]);
        }
        minor(&self.inverse, &axes_of(a), &axes_of(b))
    }

    pub fn inner(&self, a: &MultiVector<T>, b: &MultiVector<T>) -> Result<T> {
        if a.dim() != self.dim || b.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim().max(b.dim()) });
        }
        let mut s = T::zero();
        for i in 0..a.len() {
            let ca = a.coeff(i);
            if ca == T::zero() {
                continue;
            }
            for j in 0..b.len() {
                let cb = b.coeff(j);
                if cb != T::zero() {
                    s += ca * cb * self.blade_product(i, j);
                }
            }
        }
        Ok(s)
    }

    pub fn norm_sq(&self, a: &MultiVector<T>) -> Result<T> {
        self.inner(a, a)
    }

    /// Hodge star defined by `b ^ *a = <b, a> dvol` with
    /// `dvol = orientation * sqrt(det g) e^{1..n}`.
    pub fn hodge_star(&self, a: &MultiVector<T>, positive_orientation: bool) -> Result<MultiVector<T>> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim() });
        }
        let full = a.len() - 1;
        let vol = self.det().sqrt() * sign::<T>(!positive_orientation);
        let mut out = MultiVector::zero(self.dim);
        for j in 0..a.len() {
            let mut pairing = T::zero();
            for i in 0..a.len() {
                let c = a.coeff(i);
                if c != T::zero() {
                    pairing += c * self.blade_product(j, i);
                }
            }
            if pairing == T::zero() {
                continue;
            }
            let k = full ^ j;
            let v = out.coeff(k) + sign::<T>(wedge_sign(j, k)) * pairing * vol;
            out.set(k, v);
        }
        Ok(out)
    }

    /// `c(omega) a = omega ^ a - i_{omega#} a`.
    pub fn clifford(&self, omega: &MultiVector<T>, a: &MultiVector<T>) -> Result<MultiVector<T>> {
        let w = omega.grade(1);
        Ok(w.wedge(a)?.sub(&a.interior(&self.sharp(&w))?))
    }

    /// `c-hat(omega) a = omega ^ a + i_{omega#} a`.
    pub fn clifford_hat(&self, omega: &MultiVector<T>, a: &MultiVector<T>) -> Result<MultiVector<T>> {
        let w = omega.grade(1);
        Ok(w.wedge(a)?.add(&a.interior(&self.sharp(&w))?))
    }
}

/// Determinant of the submatrix with the given rows and columns (k <= 4).
fn minor<T: Real>(m: &[[T; MAX_DIM]; MAX_DIM], rows: &[usize], cols: &[usize]) -> T {
    match rows.len() {
        0 => T::one(),
        1 => m[rows[0]][cols[0]],
        _ => {
            let mut det = T::zero();
            for (c, &col) in cols.iter().enumerate() {
                let entry = m[rows[0]][col];
                if entry == T::zero() {
                    continue;
                }
                let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != col).collect();
                det += sign::<T>(c % 2 == 1) * entry * minor(m, &rows[1..], &sub_cols);
            }
            det
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Mv = MultiVector<f64>;

    fn random_mv(rng: &mut ChaCha8Rng, dim: usize) -> Mv {
        let mut m = Mv::zero(dim);
        for i in 0..m.len() {
            m.set(i, rng.gen_range(-1.0..1.0));
        }
        m
    }

    fn random_two_form(rng: &mut ChaCha8Rng) -> Mv {
        random_mv(rng, 4).grade(2)
    }

    #[test]
    fn basis_wedge() {
        let e1 = Mv::basis(4, &[0]);
        let e2 = Mv::basis(4, &[1]);
        assert_eq!(e1.wedge(&e2).unwrap().coeff(0b11), 1.0);
        assert_eq!(e2.wedge(&e1).unwrap().coeff(0b11), -1.0);
        assert_eq!(Mv::basis(4, &[1, 0]).coeff(0b11), -1.0);
    }

    #[test]
    fn self_dual_square() {
        let z = Mv::basis(4, &[0, 1]).add(&Mv::basis(4, &[2, 3]));
        let sq = z.wedge(&z).unwrap();
        assert_eq!(sq.top(), 2.0);
        assert_eq!(sq.norm_sq(), 4.0);
        let d = Mv::basis(4, &[0, 1]);
        assert_eq!(d.wedge(&d).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn wedge_dimension_mismatch() {
        let a = Mv::basis(3, &[0]);
        let b = Mv::basis(4, &[0]);
        assert!(matches!(a.wedge(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn interior_examples() {
        let e12 = Mv::basis(4, &[0, 1]);
        let r = e12.interior(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, Mv::basis(4, &[1]));
        let r = e12.interior(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.norm_sq(), 0.0);
    }

    #[test]
    fn interior_is_adjoint_of_wedge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ips = [
            InnerProduct::euclidean(4),
            InnerProduct::diagonal(&[2.0, 0.5, 1.5, 3.0]).unwrap(),
            InnerProduct::general(&[
                vec![2.0, 0.3, 0.0, 0.1],
                vec![0.3, 1.0, 0.2, 0.0],
                vec![0.0, 0.2, 1.5, 0.4],
                vec![0.1, 0.0, 0.4, 2.5],
            ])
            .unwrap(),
        ];
        for ip in &ips {
            for _ in 0..100 {
                let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let a = random_mv(&mut rng, 4);
                let b = random_mv(&mut rng, 4);
                let lhs = ip.inner(&a.interior(&v).unwrap(), &b).unwrap();
                let rhs = ip.inner(&a, &ip.flat(&v).wedge(&b).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn clifford_relations() {
        let ip = InnerProduct::euclidean(4);
        let w1 = Mv::basis(4, &[0]);
        let e2 = Mv::basis(4, &[1]);
        let once = ip.clifford(&w1, &e2).unwrap();
        assert_eq!(ip.clifford(&w1, &once).unwrap(), e2.scale(-1.0));
        assert_eq!(ip.clifford_hat(&w1, &Mv::scalar(4, 1.0)).unwrap(), w1);

        // c(w^i)c(w^j) + c(w^j)c(w^i) = -2 delta_ij on every basis element.
        for i in 0..4 {
            for j in 0..4 {
                for mask in 0..16 {
                    let a = Mv::from_mask(4, mask, 1.0);
                    let s = a.clifford_basis(j).clifford_basis(i).add(&a.clifford_basis(i).clifford_basis(j));
                    let expected = if i == j { a.scale(-2.0) } else { Mv::zero(4) };
                    assert_eq!(s, expected);
                    let h = a.clifford_hat_basis(j).clifford_hat_basis(i).add(&a.clifford_hat_basis(i).clifford_hat_basis(j));
                    let expected = if i == j { a.scale(2.0) } else { Mv::zero(4) };
                    assert_eq!(h, expected);
                }
            }
        }
    }

    #[test]
    fn clifford_square_general_covector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ip = InnerProduct::diagonal(&[1.5, 0.7, 2.0, 1.1]).unwrap();
        for _ in 0..20 {
            let w = random_mv(&mut rng, 4).grade(1);
            let a = random_mv(&mut rng, 4);
            let n2 = ip.norm_sq(&w).unwrap();
            let cc = ip.clifford(&w, &ip.clifford(&w, &a).unwrap()).unwrap();
            assert!(cc.add(&a.scale(n2)).max_abs() < 1e-12);
            let hh = ip.clifford_hat(&w, &ip.clifford_hat(&w, &a).unwrap()).unwrap();
            assert!(hh.sub(&a.scale(n2)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn degree_preserving_part_on_homogeneous_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_mv(&mut rng, 4);
            for k in 0..=4 {
                let ak = a.grade(k);
                for j in 0..4 {
                    for m in 0..4 {
                        if j == m {
                            continue;
                        }
                        let jm = ak.clifford_hat_basis(m).clifford_basis(j).grade(k);
                        let mj = ak.clifford_hat_basis(j).clifford_basis(m).grade(k);
                        assert!(jm.sub(&mj).max_abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn star_examples() {
        let ip = InnerProduct::euclidean(4);
        let s = ip.hodge_star(&Mv::basis(4, &[0, 1]), true).unwrap();
        assert_eq!(s, Mv::basis(4, &[2, 3]));
        let s = ip.hodge_star(&Mv::scalar(4, 1.0), true).unwrap();
        assert_eq!(s, Mv::basis(4, &[0, 1, 2, 3]));
        for mask in 0..16usize {
            let a = Mv::from_mask(4, mask, 1.0);
            let k = mask.count_ones() as usize;
            let ss = ip.hodge_star(&ip.hodge_star(&a, true).unwrap(), true).unwrap();
            let expected = if (k * (4 - k)) % 2 == 1 { -1.0 } else { 1.0 };
            assert_eq!(ss, a.scale(expected));
            assert_eq!(a.star_euclidean(), ip.hodge_star(&a, true).unwrap());
        }
    }

    #[test]
    fn star_volume_identity_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ip = InnerProduct::<f64>::diagonal(&[1.3, 0.4, 2.2, 0.9]).unwrap();
        let vol = ip.det().sqrt();
        for _ in 0..50 {
            let a = random_mv(&mut rng, 4);
            for k in 0..=4 {
                let ak = a.grade(k);
                let lhs = ak.wedge(&ip.hodge_star(&ak, true).unwrap()).unwrap().top();
                let rhs = ip.norm_sq(&ak).unwrap() * vol;
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
        let ip3 = InnerProduct::<f64>::euclidean(3);
        let s = ip3.hodge_star(&Mv::basis(3, &[0]), true).unwrap();
        assert_eq!(s, Mv::basis(3, &[1, 2]));
    }

    #[test]
    fn pfaffian_examples() {
        let e12 = Mv::basis(4, &[0, 1]);
        assert_eq!(e12.pfaffian().unwrap(), 0.0);
        let z = e12.add(&Mv::basis(4, &[2, 3]));
        assert_eq!(z.pfaffian().unwrap(), 1.0);
        assert!(Mv::basis(4, &[0]).pfaffian().is_err());
        assert!(Mv::basis(3, &[0, 1]).pfaffian().is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z = random_two_form(&mut rng);
            let w = z.wedge(&z).unwrap().top();
            assert!((w - 2.0 * z.pfaffian().unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn pfaffian_polarization() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let z = random_two_form(&mut rng);
            let v = random_two_form(&mut rng);
            let pol = z.add(&v).pfaffian().unwrap() - z.pfaffian().unwrap() - v.pfaffian().unwrap();
            let via_wedge = 0.5 * (z.wedge(&v).unwrap().top() + v.wedge(&z).unwrap().top());
            assert!((pol - via_wedge).abs() < 1e-13);
            assert!((pol - 2.0 * z.pfaffian_bilinear(&v).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn sd_asd_examples() {
        let e12 = Mv::basis(4, &[0, 1]);
        let e34 = Mv::basis(4, &[2, 3]);
        let (p, m) = e12.sd_asd_split().unwrap();
        assert_eq!(p, e12.add(&e34).scale(0.5));
        assert_eq!(m, e12.sub(&e34).scale(0.5));
        let z = e12.scale(2.0).add(&e34);
        let (p, m) = z.sd_asd_split().unwrap();
        assert!((p.norm_sq() - 4.5).abs() < 1e-15);
        assert!((m.norm_sq() - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let z = random_two_form(&mut rng);
            let (p, m) = z.sd_asd_split().unwrap();
            assert!(p.star_euclidean().sub(&p).max_abs() < 1e-15);
            assert!(m.star_euclidean().add(&m).max_abs() < 1e-15);
            assert!(p.add(&m).sub(&z).max_abs() < 1e-15);
        }
    }

    #[test]
    fn product_form_links_pfaffian_and_split() {
        for (a, b) in [(2.0, 1.0), (3.0, -0.5), (1.0, 0.0)] {
            let z = Mv::basis(4, &[0, 1]).scale(a).add(&Mv::basis(4, &[2, 3]).scale(b));
            let (p, m) = z.sd_asd_split().unwrap();
            let lhs: f64 = (a * a - b * b) * (a * a - b * b);
            assert!((lhs - 4.0 * p.norm_sq() * m.norm_sq()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_rational_algebra() {
        use num_rational::Ratio;
        type Q = Ratio<i64>;
        let a = MultiVector::<Q>::basis(4, &[0]).add(&MultiVector::basis(4, &[2]).scale(Q::new(1, 3)));
        let b = MultiVector::<Q>::basis(4, &[1, 3]).scale(Q::new(-2, 5));
        let c = MultiVector::<Q>::basis(4, &[1]).add(&MultiVector::scalar(4, Q::new(7, 2)));
        let left = a.wedge(&b).unwrap().wedge(&c).unwrap();
        let right = a.wedge(&b.wedge(&c).unwrap()).unwrap();
        assert_eq!(left, right);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mv() -> impl Strategy<Value = Mv> {
            proptest::collection::vec(-1.0f64..1.0, 16).prop_map(|v| {
                let mut m = Mv::zero(4);
                for (i, x) in v.into_iter().enumerate() {
                    m.set(i, x);
                }
                m
            })
        }

        proptest! {
            #[test]
            fn wedge_associative(a in mv(), b in mv(), c in mv()) {
                let l = a.wedge(&b).unwrap().wedge(&c).unwrap();
                let r = a.wedge(&b.wedge(&c).unwrap()).unwrap();
                prop_assert!(l.sub(&r).max_abs() < 1e-12);
            }

            #[test]
            fn graded_anticommutative(a in mv(), b in mv(), j in 0usize..5, k in 0usize..5) {
                let aj = a.grade(j);
                let bk = b.grade(k);
                let s = if (j * k) % 2 == 1 { -1.0 } else { 1.0 };
                let d = aj.wedge(&bk).unwrap().sub(&bk.wedge(&aj).unwrap().scale(s));
                prop_assert!(d.max_abs() < 1e-12);
            }
        }
    }
}
