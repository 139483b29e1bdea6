//! Toric surfaces reduced to their moment polygon.
//!
//! Torus-invariant potentials are functions of the reference moment
//! coordinate `x ∈ P`. The reference metric is Guillemin's, with symplectic
//! potential `u₀ = ½ Σ ℓᵢ log ℓᵢ`, `ℓᵢ(x) = 1 − ⟨x, nᵢ⟩`. Its inverse Hessian
//! `G = (D²u₀)⁻¹` is smooth up to the boundary and kills the normal direction
//! on each facet, so the reduced operators need no boundary conditions.
//!
//! Functions are expanded in polynomials of total degree ≤ `degree`,
//! orthonormalized against `dμ = 2!(2π)² dx` on a Gauss fan rule.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mathf::{exp, log, sqrt, PI};
use crate::quadrature::polygon_rule;

/// Measure factor turning `dx` on the polygon into `ωⁿ` on the surface.
pub const MEASURE_FACTOR: f64 = 8.0 * PI * PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    /// Counter-clockwise vertices.
    pub vertices: Vec<[f64; 2]>,
    /// Facet normals with the facets written as `⟨x, nᵢ⟩ = 1`; facet `i` joins
    /// vertex `i` to vertex `i+1`.
    pub normals: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidGeometry("polygon needs at least three vertices".into()));
        }
        let mut v: Vec<[f64; 2]> = vertices.to_vec();
        let signed: f64 = (0..v.len())
            .map(|k| {
                let a = v[k];
                let b = v[(k + 1) % v.len()];
                a[0] * b[1] - a[1] * b[0]
            })
            .sum();
        if signed < 0.0 {
            v.reverse();
        }
        let n = v.len();
        for k in 0..n {
            let a = v[k];
            let b = v[(k + 1) % n];
            let c = v[(k + 2) % n];
            let turn = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if turn <= 1e-12 {
                return Err(Error::InvalidGeometry(alloc::format!("polygon not strictly convex at vertex {}", (k + 1) % n)));
            }
        }
        let mut normals = Vec::with_capacity(n);
        for k in 0..n {
            let a = v[k];
            let b = v[(k + 1) % n];
            let det = a[0] * b[1] - a[1] * b[0];
            if det <= 1e-12 {
                return Err(Error::InvalidGeometry("origin is not interior to the polygon".into()));
            }
            normals.push([(b[1] - a[1]) / det, -(b[0] - a[0]) / det]);
        }
        Ok(Self { vertices: v, normals })
    }

    /// Square `[-1, 1]²`, the moment polygon of CP¹ × CP¹.
    pub fn square() -> Self {
        Self::new(&[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap()
    }

    /// CP² blown up at one torus-fixed point.
    pub fn blowup_cp2() -> Self {
        Self::new(&[[-1.0, 0.0], [0.0, -1.0], [2.0, -1.0], [-1.0, 2.0]]).unwrap()
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|k| {
                let a = self.vertices[k];
                let b = self.vertices[(k + 1) % n];
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
    }

    /// Whether every facet normal is an integer vector (to `1e-9`).
    pub fn has_integral_normals(&self) -> bool {
        self.normals.iter().all(|n| n.iter().all(|&c| (c - libm::round(c)).abs() < 1e-9))
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        self.normals.iter().all(|n| x[0] * n[0] + x[1] * n[1] < 1.0)
    }

    /// Facet distances `ℓᵢ(x)`.
    pub fn slacks(&self, x: [f64; 2]) -> Vec<f64> {
        self.normals.iter().map(|n| 1.0 - x[0] * n[0] - x[1] * n[1]).collect()
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }
}

/// Guillemin potential data at one point: `u₀`, `∇u₀`, `D²u₀` (xx, xy, yy).
pub fn guillemin_jet(poly: &Polygon, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
    let mut u = 0.0;
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for n in &poly.normals {
        let l = 1.0 - x[0] * n[0] - x[1] * n[1];
        let ll = log(l);
        u += 0.5 * l * ll;
        g[0] -= 0.5 * n[0] * (ll + 1.0);
        g[1] -= 0.5 * n[1] * (ll + 1.0);
        h[0] += 0.5 * n[0] * n[0] / l;
        h[1] += 0.5 * n[0] * n[1] / l;
        h[2] += 0.5 * n[1] * n[1] / l;
    }
    (u, g, h)
}

/// Legendre transform value `Φ₀ = ⟨x, ∇u₀⟩ − u₀` of the Guillemin potential.
pub fn guillemin_dual(poly: &Polygon, x: [f64; 2]) -> f64 {
    poly.slacks(x).iter().map(|&l| -0.5 * (log(l) + 1.0 - l)).sum()
}

/// Solve `∇u₀(x) = ξ` for `x` inside the polygon by damped Newton.
pub fn invert_guillemin_gradient(poly: &Polygon, xi: [f64; 2], start: [f64; 2]) -> Result<[f64; 2]> {
    let mut x = start;
    let mut history = Vec::new();
    for _ in 0..200 {
        let (_, g, h) = guillemin_jet(poly, x);
        let r = [g[0] - xi[0], g[1] - xi[1]];
        let rn = sqrt(r[0] * r[0] + r[1] * r[1]);
        history.push(rn);
        if rn < 1e-13 * (1.0 + sqrt(xi[0] * xi[0] + xi[1] * xi[1])) {
            return Ok(x);
        }
        let det = h[0] * h[2] - h[1] * h[1];
        let dx = [-(h[2] * r[0] - h[1] * r[1]) / det, -(-h[1] * r[0] + h[0] * r[1]) / det];
        let mut t = 1.0;
        loop {
            let trial = [x[0] + t * dx[0], x[1] + t * dx[1]];
            if poly.contains(trial) {
                x = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NonConvergence { what: "moment map inversion", residuals: history });
            }
        }
    }
    Err(Error::NonConvergence { what: "moment map inversion", residuals: history })
}

/// One step `q_k = (t_axis q_parent − Σ_{i<k} h_i q_i) / norm` of the
/// orthogonalizing recurrence, `t` the box-scaled coordinates.
#[derive(Debug, Clone)]
struct Recurrence {
    parent: usize,
    axis: usize,
    h: Vec<f64>,
    norm: f64,
}

/// Values and jets of all basis functions at one point.
#[derive(Debug, Clone)]
struct PointJets {
    v: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dxx: Vec<f64>,
    dxy: Vec<f64>,
    dyy: Vec<f64>,
}

/// Polygon model with reference (Guillemin) data sampled on a Gauss fan.
#[derive(Debug, Clone)]
pub struct ToricModel {
    pub polygon: Polygon,
    pub resolution: usize,
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    /// Quadrature weights for `dμ`; they sum to `V`.
    pub weights: Vec<f64>,
    /// `G = (D²u₀)⁻¹` as (xx, xy, yy).
    pub g: Vec<[f64; 3]>,
    /// `∂_x G` and `∂_y G`.
    pub dg: Vec<[[f64; 3]; 2]>,
    /// Ricci potential of the Guillemin metric, normalized `∫ e^{h₀} dμ = V`.
    pub ricci0: Vec<f64>,
    pub values: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub dxx: DMatrix<f64>,
    pub dxy: DMatrix<f64>,
    pub dyy: DMatrix<f64>,
    steps: Vec<Recurrence>,
    center: [f64; 2],
    half: [f64; 2],
}

/// Degree used for a given resolution.
pub fn degree_for_resolution(resolution: usize) -> usize {
    (resolution / 3).max(2)
}

impl ToricModel {
    pub fn new(polygon: Polygon, resolution: usize) -> Result<Self> {
        Self::with_degree(polygon, resolution, degree_for_resolution(resolution))
    }

    /// `resolution` is the number of nodes per direction across the whole
    /// fan: each of the fan triangles receives a `(resolution/2)²` rule.
    pub fn with_degree(polygon: Polygon, resolution: usize, degree: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::InvalidGeometry(alloc::format!("resolution {resolution} < 8")));
        }
        let per_tri = resolution / 2;
        if degree + 1 > per_tri {
            return Err(Error::InvalidGeometry(alloc::format!(
                "degree {degree} is not resolved by {per_tri} nodes per triangle"
            )));
        }
        let (points, raw_w) = polygon_rule(&polygon.vertices, per_tri);
        let weights: Vec<f64> = raw_w.iter().map(|w| w * MEASURE_FACTOR).collect();
        let (lo, hi) = polygon.bounding_box();
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
        let nn = points.len();
        let nb = (degree + 1) * (degree + 2) / 2;

        let mut g = Vec::with_capacity(nn);
        let mut dg = Vec::with_capacity(nn);
        let mut ricci0 = Vec::with_capacity(nn);
        let sum_n = polygon.normals.iter().fold([0.0; 2], |a, n| [a[0] + n[0], a[1] + n[1]]);
        for &x in &points {
            let (gq, dgq, hdet_slack) = reference_jet(&polygon, x);
            g.push(gq);
            dg.push(dgq);
            ricci0.push(log(hdet_slack) + x[0] * sum_n[0] + x[1] * sum_n[1]);
        }
        let volume: f64 = weights.iter().sum();
        let z: f64 = ricci0.iter().zip(&weights).map(|(h, w)| w * exp(*h)).sum();
        let shift = log(z / volume);
        for h in &mut ricci0 {
            *h -= shift;
        }

        let scaled: Vec<[f64; 2]> =
            points.iter().map(|x| [(x[0] - center[0]) / half[0], (x[1] - center[1]) / half[1]]).collect();
        let mut exponents = alloc::vec![(0usize, 0usize)];
        for total in 1..=degree {
            for a in 0..=total {
                exponents.push((a, total - a));
            }
        }
        let find = |e: (usize, usize)| exponents.iter().position(|&p| p == e).unwrap_or(0);
        let mut v = DMatrix::zeros(nn, nb);
        let mut dx = DMatrix::zeros(nn, nb);
        let mut dy = DMatrix::zeros(nn, nb);
        let mut dxx = DMatrix::zeros(nn, nb);
        let mut dxy = DMatrix::zeros(nn, nb);
        let mut dyy = DMatrix::zeros(nn, nb);
        v.column_mut(0).fill(1.0 / sqrt(volume));
        let mut steps = Vec::with_capacity(nb);
        steps.push(Recurrence { parent: 0, axis: 0, h: Vec::new(), norm: 1.0 });
        for k in 1..nb {
            let (a, b) = exponents[k];
            let (parent, axis) = if a > 0 { (find((a - 1, b)), 0) } else { (find((0, b - 1)), 1) };
            let mut col = DVector::from_iterator(nn, (0..nn).map(|q| scaled[q][axis] * v[(q, parent)]));
            let mut h = DVector::zeros(k);
            for _ in 0..2 {
                let wc = DVector::from_iterator(nn, (0..nn).map(|q| col[q] * weights[q]));
                let hp = v.columns(0, k).tr_mul(&wc);
                col -= v.columns(0, k) * &hp;
                h += hp;
            }
            let norm = sqrt((0..nn).map(|q| col[q] * col[q] * weights[q]).sum::<f64>());
            if !(norm > 1e-12) {
                return Err(Error::InvalidGeometry("polynomial basis is rank deficient on this rule".into()));
            }
            v.set_column(k, &(col / norm));
            let s = 1.0 / half[axis];
            let (ex, ey) = if axis == 0 { (s, 0.0) } else { (0.0, s) };
            let lead = |m: &DMatrix<f64>, extra: &dyn Fn(usize) -> f64| -> DVector<f64> {
                let base = DVector::from_iterator(nn, (0..nn).map(|q| scaled[q][axis] * m[(q, parent)] + extra(q)));
                (base - m.columns(0, k) * &h) / norm
            };
            let cx = lead(&dx, &|q| ex * v[(q, parent)]);
            let cy = lead(&dy, &|q| ey * v[(q, parent)]);
            let cxx = lead(&dxx, &|q| 2.0 * ex * dx[(q, parent)]);
            let cxy = lead(&dxy, &|q| ex * dy[(q, parent)] + ey * dx[(q, parent)]);
            let cyy = lead(&dyy, &|q| 2.0 * ey * dy[(q, parent)]);
            dx.set_column(k, &cx);
            dy.set_column(k, &cy);
            dxx.set_column(k, &cxx);
            dxy.set_column(k, &cxy);
            dyy.set_column(k, &cyy);
            steps.push(Recurrence { parent, axis, h: h.as_slice().to_vec(), norm });
        }
        Ok(Self {
            polygon,
            resolution,
            degree,
            points,
            weights,
            g,
            dg,
            ricci0,
            values: v,
            dx,
            dy,
            dxx,
            dxy,
            dyy,
            steps,
            center,
            half,
        })
    }

    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn basis_count(&self) -> usize {
        self.values.ncols()
    }

    fn jets_at(&self, x: [f64; 2]) -> PointJets {
        let nb = self.steps.len();
        let t = [(x[0] - self.center[0]) / self.half[0], (x[1] - self.center[1]) / self.half[1]];
        let mut j = PointJets {
            v: alloc::vec![0.0; nb],
            dx: alloc::vec![0.0; nb],
            dy: alloc::vec![0.0; nb],
            dxx: alloc::vec![0.0; nb],
            dxy: alloc::vec![0.0; nb],
            dyy: alloc::vec![0.0; nb],
        };
        j.v[0] = self.values[(0, 0)];
        for (k, st) in self.steps.iter().enumerate().skip(1) {
            let p = st.parent;
            let s = 1.0 / self.half[st.axis];
            let (ex, ey) = if st.axis == 0 { (s, 0.0) } else { (0.0, s) };
            let ta = t[st.axis];
            let back = |c: &[f64]| -> f64 { st.h.iter().zip(c).map(|(a, b)| a * b).sum() };
            let v = (ta * j.v[p] - back(&j.v)) / st.norm;
            let dx = (ex * j.v[p] + ta * j.dx[p] - back(&j.dx)) / st.norm;
            let dy = (ey * j.v[p] + ta * j.dy[p] - back(&j.dy)) / st.norm;
            let dxx = (2.0 * ex * j.dx[p] + ta * j.dxx[p] - back(&j.dxx)) / st.norm;
            let dxy = (ex * j.dy[p] + ey * j.dx[p] + ta * j.dxy[p] - back(&j.dxy)) / st.norm;
            let dyy = (2.0 * ey * j.dy[p] + ta * j.dyy[p] - back(&j.dyy)) / st.norm;
            j.v[k] = v;
            j.dx[k] = dx;
            j.dy[k] = dy;
            j.dxx[k] = dxx;
            j.dxy[k] = dxy;
            j.dyy[k] = dyy;
        }
        j
    }

    /// Basis values, gradient and Hessian (xx, xy, yy) at an arbitrary point.
    pub fn basis_jet_at(&self, x: [f64; 2]) -> (Vec<f64>, [Vec<f64>; 2], [Vec<f64>; 3]) {
        let j = self.jets_at(x);
        (j.v, [j.dx, j.dy], [j.dxx, j.dxy, j.dyy])
    }

    /// Values of expansions with the given coefficient vectors at arbitrary points.
    pub fn evaluate_many(&self, points: &[[f64; 2]], coeffs: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut out = alloc::vec![Vec::with_capacity(points.len()); coeffs.len()];
        for &x in points {
            let b = self.basis_at(x);
            for (o, c) in out.iter_mut().zip(coeffs) {
                o.push(b.iter().zip(c.iter()).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    pub fn basis_at(&self, x: [f64; 2]) -> Vec<f64> {
        let nb = self.steps.len();
        let t = [(x[0] - self.center[0]) / self.half[0], (x[1] - self.center[1]) / self.half[1]];
        let mut v = alloc::vec![0.0; nb];
        v[0] = self.values[(0, 0)];
        for (k, st) in self.steps.iter().enumerate().skip(1) {
            let back: f64 = st.h.iter().zip(&v).map(|(a, b)| a * b).sum();
            v[k] = (t[st.axis] * v[st.parent] - back) / st.norm;
        }
        v
    }
}

/// `G`, `∂G` and `det(D²u₀) Π ℓᵢ` at a point.
fn reference_jet(poly: &Polygon, x: [f64; 2]) -> ([f64; 3], [[f64; 3]; 2], f64) {
    let (_, _, h) = guillemin_jet(poly, x);
    let det = h[0] * h[2] - h[1] * h[1];
    let g = [h[2] / det, -h[1] / det, h[0] / det];
    let mut dg = [[0.0; 3]; 2];
    let mut slack_prod = 1.0;
    for c in 0..2 {
        let mut dh = [0.0; 3];
        for n in &poly.normals {
            let l = 1.0 - x[0] * n[0] - x[1] * n[1];
            let f = 0.5 * n[c] / (l * l);
            dh[0] += f * n[0] * n[0];
            dh[1] += f * n[0] * n[1];
            dh[2] += f * n[1] * n[1];
        }
        // ∂G = −G (∂H) G
        let gm = [[g[0], g[1]], [g[1], g[2]]];
        let hm = [[dh[0], dh[1]], [dh[1], dh[2]]];
        let mut t = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                t[i][j] = (0..2).map(|k| hm[i][k] * gm[k][j]).sum();
            }
        }
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = -(0..2).map(|k| gm[i][k] * t[k][j]).sum::<f64>();
            }
        }
        dg[c] = [out[0][0], out[0][1], out[1][1]];
    }
    for l in poly.slacks(x) {
        slack_prod *= l;
    }
    (g, dg, det * slack_prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_polygons() {
        assert!(Polygon::new(&[[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]]).is_err());
        assert!(Polygon::new(&[[-1.0, -1.0], [1.0, -1.0], [0.0, -0.5], [1.0, 1.0], [-1.0, 1.0]]).is_err());
    }

    #[test]
    fn blowup_facets_are_reflexive() {
        let p = Polygon::blowup_cp2();
        assert!(p.has_integral_normals());
        for (k, n) in p.normals.iter().enumerate() {
            for v in [p.vertices[k], p.vertices[(k + 1) % p.vertices.len()]] {
                assert!((v[0] * n[0] + v[1] * n[1] - 1.0).abs() < 1e-14);
            }
        }
        assert!((p.area() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn square_reference_is_product_round_metric() {
        let m = ToricModel::new(Polygon::square(), 16).unwrap();
        for (q, x) in m.points.iter().enumerate() {
            assert!((m.g[q][0] - (1.0 - x[0] * x[0])).abs() < 1e-12);
            assert!(m.g[q][1].abs() < 1e-12);
            assert!(m.ricci0[q].abs() < 1e-12);
        }
        let v: f64 = m.weights.iter().sum();
        assert!((v - 32.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn derivative_of_g_matches_finite_differences() {
        let p = Polygon::blowup_cp2();
        let x = [0.3, -0.2];
        let h = 1e-6;
        let (g0, dg, _) = reference_jet(&p, x);
        let _ = g0;
        for c in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let (gp, _, _) = reference_jet(&p, xp);
            let (gm, _, _) = reference_jet(&p, xm);
            for e in 0..3 {
                assert!(((gp[e] - gm[e]) / (2.0 * h) - dg[c][e]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn orthonormal_basis_and_pointwise_evaluation() {
        let m = ToricModel::new(Polygon::blowup_cp2(), 24).unwrap();
        let nb = m.basis_count();
        let mut wv = m.values.clone();
        for q in 0..m.node_count() {
            for k in 0..nb {
                wv[(q, k)] *= m.weights[q];
            }
        }
        let gram = m.values.transpose() * wv;
        let err = (gram - DMatrix::<f64>::identity(nb, nb)).amax();
        assert!(err < 1e-10, "{err}");
        let q = 11;
        let (v, gr, hs) = m.basis_jet_at(m.points[q]);
        for k in 0..nb {
            assert!((v[k] - m.values[(q, k)]).abs() < 1e-9);
            assert!((gr[0][k] - m.dx[(q, k)]).abs() < 1e-8);
            assert!((hs[1][k] - m.dxy[(q, k)]).abs() < 1e-7);
        }
        let c: Vec<f64> = (0..nb).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let many = m.evaluate_many(&m.points[..20], &[&c]);
        for q in 0..20 {
            let direct: f64 = (0..nb).map(|k| m.values[(q, k)] * c[k]).sum();
            assert!((many[0][q] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn moment_inverse_round_trips() {
        let p = Polygon::blowup_cp2();
        let x = [0.9, -0.7];
        let (_, xi, _) = guillemin_jet(&p, x);
        let back = invert_guillemin_gradient(&p, xi, [0.0, 0.0]).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-11 && (back[1] - x[1]).abs() < 1e-11);
    }
}
