//! Connection and curvature of diagonal metrics `g = sum_i e^{2 phi_i(x)} dx_i^2`.
//!
//! Frame quantities refer to the orthonormal coordinate frame
//! `v_i = e^{-phi_i} d/dx_i`. Conventions:
//! `gamma[m][k][j] = <nabla_{v_m} v_k, v_j>` and
//! `R(a, b, c, d) = <R(a, b) c, d>` with `R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]`,
//! so that `R(v_i, v_j, v_j, v_i)` is the sectional curvature of the `ij` plane.

pub type Vec4 = [f64; 4];
pub type Mat4 = [[f64; 4]; 4];
pub type Tensor3 = [[[f64; 4]; 4]; 4];
pub type Tensor4 = [[[[f64; 4]; 4]; 4]; 4];

/// A diagonal metric described through its log-scales `phi_i` with analytic
/// first and second derivatives. Unused trailing slots (i >= dim) are ignored.
pub trait DiagonalMetric: Send + Sync {
    fn dim(&self) -> usize;

    /// `phi_i(x)` with `g_ii = e^{2 phi_i}`.
    fn log_scales(&self, x: &[f64]) -> Vec4;

    /// `d[k][i] = d phi_i / d x_k`.
    fn d_log_scales(&self, x: &[f64]) -> Mat4;

    /// `dd[k][l][i] = d^2 phi_i / d x_k d x_l`.
    fn dd_log_scales(&self, x: &[f64]) -> Tensor3;

    fn metric_diag(&self, x: &[f64]) -> Vec4 {
        let phi = self.log_scales(x);
        let mut g = [0.0; 4];
        for i in 0..self.dim() {
            g[i] = (2.0 * phi[i]).exp();
        }
        g
    }

    /// `sqrt(det g)`.
    fn volume_density(&self, x: &[f64]) -> f64 {
        let phi = self.log_scales(x);
        (0..self.dim()).map(|i| phi[i]).sum::<f64>().exp()
    }
}

/// Christoffel symbols `gamma[a][b][c] = Gamma^a_{bc}` in coordinates.
pub fn christoffel(m: &dyn DiagonalMetric, x: &[f64]) -> Tensor3 {
    let n = m.dim();
    let phi = m.log_scales(x);
    let d = m.d_log_scales(x);
    let mut out = [[[0.0; 4]; 4]; 4];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut v = 0.0;
                if a == c {
                    v += d[b][a];
                }
                if a == b {
                    v += d[c][a];
                }
                if b == c {
                    v -= (2.0 * phi[b] - 2.0 * phi[a]).exp() * d[a][b];
                }
                out[a][b][c] = v;
            }
        }
    }
    out
}

/// `dgamma[e][a][b][c] = d Gamma^a_{bc} / d x_e`.
pub fn christoffel_derivative(m: &dyn DiagonalMetric, x: &[f64]) -> Tensor4 {
    let n = m.dim();
    let phi = m.log_scales(x);
    let d = m.d_log_scales(x);
    let dd = m.dd_log_scales(x);
    let mut out = [[[[0.0; 4]; 4]; 4]; 4];
    for e in 0..n {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut v = 0.0;
                    if a == c {
                        v += dd[e][b][a];
                    }
                    if a == b {
                        v += dd[e][c][a];
                    }
                    if b == c {
                        let w = (2.0 * phi[b] - 2.0 * phi[a]).exp();
                        v -= w * (2.0 * (d[e][b] - d[e][a]) * d[a][b] + dd[e][a][b]);
                    }
                    out[e][a][b][c] = v;
                }
            }
        }
    }
    out
}

/// Connection coefficients of the orthonormal coordinate frame,
/// `gamma[m][k][j] = <nabla_{v_m} v_k, v_j>`.
pub fn frame_connection(m: &dyn DiagonalMetric, x: &[f64]) -> Tensor3 {
    let n = m.dim();
    let phi = m.log_scales(x);
    let d = m.d_log_scales(x);
    let gam = christoffel(m, x);
    let mut out = [[[0.0; 4]; 4]; 4];
    for a in 0..n {
        for k in 0..n {
            for j in 0..n {
                let mut v = gam[j][a][k] * (phi[j] - phi[k]).exp();
                if k == j {
                    v -= d[a][k];
                }
                out[a][k][j] = (-phi[a]).exp() * v;
            }
        }
    }
    out
}

/// Coordinate Riemann tensor `r[a][b][c][d] = <R(d_a, d_b) d_c, d_d>`.
pub fn riemann_coordinate(m: &dyn DiagonalMetric, x: &[f64]) -> Tensor4 {
    let n = m.dim();
    let g = m.metric_diag(x);
    let gam = christoffel(m, x);
    let dgam = christoffel_derivative(m, x);
    let mut out = [[[[0.0; 4]; 4]; 4]; 4];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for dd in 0..n {
                    let mut v = dgam[a][dd][b][c] - dgam[b][dd][a][c];
                    for e in 0..n {
                        v += gam[dd][a][e] * gam[e][b][c] - gam[dd][b][e] * gam[e][a][c];
                    }
                    out[a][b][c][dd] = g[dd] * v;
                }
            }
        }
    }
    out
}

/// Riemann tensor in the orthonormal coordinate frame.
pub fn riemann_frame(m: &dyn DiagonalMetric, x: &[f64]) -> Tensor4 {
    let n = m.dim();
    let phi = m.log_scales(x);
    let r = riemann_coordinate(m, x);
    let mut out = [[[[0.0; 4]; 4]; 4]; 4];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    out[a][b][c][d] = (-(phi[a] + phi[b] + phi[c] + phi[d])).exp() * r[a][b][c][d];
                }
            }
        }
    }
    out
}

/// Ricci tensor in the orthonormal frame, `Ric(v_a, v_b) = sum_j R(v_j, v_a, v_b, v_j)`.
pub fn ricci_frame(m: &dyn DiagonalMetric, x: &[f64]) -> Mat4 {
    let n = m.dim();
    let r = riemann_frame(m, x);
    let mut out = [[0.0; 4]; 4];
    for a in 0..n {
        for b in 0..n {
            out[a][b] = (0..n).map(|j| r[j][a][b][j]).sum();
        }
    }
    out
}

/// Flat metric of a given dimension.
#[derive(Clone, Debug)]
pub struct Flat(pub usize);

impl DiagonalMetric for Flat {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_scales(&self, _x: &[f64]) -> Vec4 {
        [0.0; 4]
    }
    fn d_log_scales(&self, _x: &[f64]) -> Mat4 {
        [[0.0; 4]; 4]
    }
    fn dd_log_scales(&self, _x: &[f64]) -> Tensor3 {
        [[[0.0; 4]; 4]; 4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Round sphere of radius r in (theta, phi) coordinates.
    struct Sphere(f64);

    impl DiagonalMetric for Sphere {
        fn dim(&self) -> usize {
            2
        }
        fn log_scales(&self, x: &[f64]) -> Vec4 {
            [self.0.ln(), (self.0 * x[0].sin()).ln(), 0.0, 0.0]
        }
        fn d_log_scales(&self, x: &[f64]) -> Mat4 {
            let mut d = [[0.0; 4]; 4];
            d[0][1] = x[0].cos() / x[0].sin();
            d
        }
        fn dd_log_scales(&self, x: &[f64]) -> Tensor3 {
            let mut dd = [[[0.0; 4]; 4]; 4];
            dd[0][0][1] = -1.0 / (x[0].sin() * x[0].sin());
            dd
        }
    }

    #[test]
    fn sphere_christoffel_and_curvature() {
        let s = Sphere(2.0);
        let x = [0.7, 0.3];
        let g = christoffel(&s, &x);
        // Gamma^theta_{phi phi} = -sin cos, Gamma^phi_{theta phi} = cot.
        assert!((g[0][1][1] + x[0].sin() * x[0].cos()).abs() < 1e-14);
        assert!((g[1][0][1] - x[0].cos() / x[0].sin()).abs() < 1e-14);
        let r = riemann_frame(&s, &x);
        assert!((r[0][1][1][0] - 0.25).abs() < 1e-12);
        assert!((r[0][1][0][1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn frame_connection_is_metric() {
        let s = Sphere(1.5);
        let gam = frame_connection(&s, &[1.1, 0.0]);
        for m in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    assert!((gam[m][k][j] + gam[m][j][k]).abs() < 1e-14);
                }
            }
        }
    }
}
