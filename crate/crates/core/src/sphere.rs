//! Round CP¹ as a real spherical-harmonic pseudo-spectral model.
//!
//! The metric is the unit sphere (Gauss curvature 1, so `Ric = ω` and the
//! area is `4π`). The complex Laplacian is half the Riemannian one, which puts
//! degree-`ℓ` harmonics at eigenvalue `ℓ(ℓ+1)/2`.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mathf::{cos, sin, sqrt, PI};
use crate::quadrature::gauss_legendre;

/// Position of `(ℓ, m)`, `-ℓ ≤ m ≤ ℓ`, in the coefficient vector.
#[inline]
pub fn mode_index(l: usize, m: i64) -> usize {
    (l * l) as usize + (l as i64 + m) as usize
}

/// Number of real harmonics up to degree `l`.
#[inline]
pub fn mode_count(l: usize) -> usize {
    (l + 1) * (l + 1)
}

/// Degree of the mode stored at `index`.
pub fn degree_of(index: usize) -> usize {
    let mut l = 0;
    while (l + 1) * (l + 1) <= index {
        l += 1;
    }
    l
}

/// Orthonormal associated Legendre values `P̃_ℓ^m(cos θ)` (unit-sphere
/// normalization, no Condon-Shortley phase) stored row-wise in `out[ℓ][m]`.
fn legendre_table(lmax: usize, x: f64, s: f64) -> Vec<Vec<f64>> {
    let mut p: Vec<Vec<f64>> = (0..=lmax).map(|l| alloc::vec![0.0; l + 1]).collect();
    p[0][0] = 1.0 / sqrt(4.0 * PI);
    for m in 1..=lmax {
        p[m][m] = sqrt((2 * m + 1) as f64 / (2 * m) as f64) * s * p[m - 1][m - 1];
    }
    for m in 0..lmax {
        p[m + 1][m] = sqrt((2 * m + 3) as f64) * x * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = sqrt((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf));
            let b = sqrt(((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0));
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    p
}

/// `dP̃_ℓ^m/dθ` from the table; requires `sin θ ≠ 0`.
fn legendre_dtheta(p: &[Vec<f64>], l: usize, m: usize, x: f64, s: f64) -> f64 {
    let lf = l as f64;
    let mf = m as f64;
    let lower = if l > m {
        sqrt((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)) * p[l - 1][m]
    } else {
        0.0
    };
    (lf * x * p[l][m] - lower) / s
}

/// Values of every real harmonic of degree ≤ `lmax` at a unit vector.
pub fn harmonics_at(lmax: usize, point: [f64; 3]) -> Vec<f64> {
    let x = point[2].clamp(-1.0, 1.0);
    let s = sqrt((point[0] * point[0] + point[1] * point[1]).max(0.0));
    let lon = crate::mathf::atan2(point[1], point[0]);
    let p = legendre_table(lmax, x, s);
    let mut out = alloc::vec![0.0; mode_count(lmax)];
    for l in 0..=lmax {
        out[mode_index(l, 0)] = p[l][0];
        for m in 1..=l {
            let c = sqrt(2.0) * p[l][m];
            out[mode_index(l, m as i64)] = c * cos(m as f64 * lon);
            out[mode_index(l, -(m as i64))] = c * sin(m as f64 * lon);
        }
    }
    out
}

/// Synthesize a harmonic expansion at one point.
pub fn evaluate_at(lmax: usize, coeffs: &[f64], point: [f64; 3]) -> f64 {
    harmonics_at(lmax, point).iter().zip(coeffs).map(|(y, c)| y * c).sum()
}

/// Gauss-Legendre × uniform-azimuth grid with harmonic synthesis matrices.
#[derive(Debug, Clone)]
pub struct SphereModel {
    pub degree: usize,
    pub nlat: usize,
    pub nlon: usize,
    /// Unit vectors of the nodes, latitude-major.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// `values[(q, k)] = Y_k(node q)`.
    pub values: DMatrix<f64>,
    /// `∂_θ Y_k` at the nodes.
    pub d_theta: DMatrix<f64>,
    /// `(1/sin θ) ∂_λ Y_k` at the nodes.
    pub d_lambda: DMatrix<f64>,
    /// Eigenvalue of `-Δ` (complex normalization) for each basis function.
    pub eigenvalues: Vec<f64>,
}

impl SphereModel {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 4 {
            return Err(Error::InvalidGeometry(alloc::format!(
                "harmonic degree {degree} < 4 cannot resolve the degree-2 decay mode"
            )));
        }
        // 3/2 padding keeps quadratic nonlinearities alias-free.
        let nlat = (3 * (degree + 1)).div_ceil(2);
        let nlon = 2 * nlat;
        let (xs, wl) = gauss_legendre(nlat);
        let nb = mode_count(degree);
        let nn = nlat * nlon;
        let mut points = Vec::with_capacity(nn);
        let mut weights = Vec::with_capacity(nn);
        let mut values = DMatrix::zeros(nn, nb);
        let mut d_theta = DMatrix::zeros(nn, nb);
        let mut d_lambda = DMatrix::zeros(nn, nb);
        let dlon = 2.0 * PI / nlon as f64;
        for (i, &x) in xs.iter().enumerate() {
            let s = sqrt(1.0 - x * x);
            let p = legendre_table(degree, x, s);
            for j in 0..nlon {
                let lon = j as f64 * dlon;
                let q = i * nlon + j;
                points.push([s * cos(lon), s * sin(lon), x]);
                weights.push(wl[i] * dlon);
                for l in 0..=degree {
                    let k0 = mode_index(l, 0);
                    values[(q, k0)] = p[l][0];
                    d_theta[(q, k0)] = legendre_dtheta(&p, l, 0, x, s);
                    for m in 1..=l {
                        let mf = m as f64;
                        let (cm, sm) = (cos(mf * lon), sin(mf * lon));
                        let c = sqrt(2.0) * p[l][m];
                        let dc = sqrt(2.0) * legendre_dtheta(&p, l, m, x, s);
                        let kp = mode_index(l, m as i64);
                        let kn = mode_index(l, -(m as i64));
                        values[(q, kp)] = c * cm;
                        values[(q, kn)] = c * sm;
                        d_theta[(q, kp)] = dc * cm;
                        d_theta[(q, kn)] = dc * sm;
                        d_lambda[(q, kp)] = -mf * c * sm / s;
                        d_lambda[(q, kn)] = mf * c * cm / s;
                    }
                }
            }
        }
        let eigenvalues = (0..nb)
            .map(|k| {
                let l = degree_of(k) as f64;
                0.5 * l * (l + 1.0)
            })
            .collect();
        Ok(Self { degree, nlat, nlon, points, weights, values, d_theta, d_lambda, eigenvalues })
    }

    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn basis_count(&self) -> usize {
        mode_count(self.degree)
    }

    /// Coefficients of the degree-one harmonic proportional to the coordinate
    /// function `x_axis` (0, 1, 2 for x, y, z), with unit L² norm.
    pub fn coordinate_mode(&self, axis: usize) -> usize {
        match axis {
            0 => mode_index(1, 1),
            1 => mode_index(1, -1),
            _ => mode_index(1, 0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_low_degree() {
        assert!(matches!(SphereModel::new(3), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        let m = SphereModel::new(8).unwrap();
        let mut wv = m.values.clone();
        for q in 0..m.node_count() {
            for k in 0..m.basis_count() {
                wv[(q, k)] *= m.weights[q];
            }
        }
        let gram = m.values.transpose() * wv;
        let err = (gram - DMatrix::<f64>::identity(m.basis_count(), m.basis_count())).amax();
        assert!(err < 1e-12, "gram error {err}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = SphereModel::new(6);
        let m = m.unwrap();
        let q = 3 * m.nlon + 5;
        let p = m.points[q];
        let theta = crate::mathf::acos(p[2]);
        let lon = crate::mathf::atan2(p[1], p[0]);
        let h = 1e-6;
        let at = |t: f64, l: f64| harmonics_at(6, [sin(t) * cos(l), sin(t) * sin(l), cos(t)]);
        let tp = at(theta + h, lon);
        let tm = at(theta - h, lon);
        let lp = at(theta, lon + h);
        let lm = at(theta, lon - h);
        for k in 0..m.basis_count() {
            let dt = (tp[k] - tm[k]) / (2.0 * h);
            let dl = (lp[k] - lm[k]) / (2.0 * h) / sin(theta);
            assert!((dt - m.d_theta[(q, k)]).abs() < 1e-7, "k={k}");
            assert!((dl - m.d_lambda[(q, k)]).abs() < 1e-7, "k={k}");
            assert!((m.values[(q, k)] - at(theta, lon)[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_one_modes_are_coordinates() {
        let m = SphereModel::new(4).unwrap();
        let c = sqrt(3.0 / (4.0 * PI));
        for q in [0, 17, 40] {
            let p = m.points[q];
            for axis in 0..3 {
                let y = m.values[(q, m.coordinate_mode(axis))];
                assert!((y - c * p[axis]).abs() < 1e-13);
            }
        }
    }
}
