//! Model geometries, potentials in spectral form, and metric evaluation.
//!
//! Every potential is stored as coefficients in the model's orthonormal basis
//! (real spherical harmonics, or orthonormalized polynomials on the moment
//! polygon). A potential is always relative to the model's native reference
//! form: the round metric on the sphere, Guillemin's metric on a toric model.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathf::{exp, log};
use crate::rng::fnv1a;
use crate::sphere::SphereModel;
use crate::toric::{Polygon, ToricModel};

/// Parameters from which a geometry is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum GeometryDescriptor {
    Sphere { degree: usize },
    Toric { vertices: Vec<[f64; 2]>, resolution: usize, degree: usize },
}

impl GeometryDescriptor {
    fn fingerprint(&self) -> u64 {
        let text: String = match self {
            GeometryDescriptor::Sphere { degree } => alloc::format!("sphere/{degree}"),
            GeometryDescriptor::Toric { vertices, resolution, degree } => {
                let mut s = alloc::format!("toric/{resolution}/{degree}");
                for v in vertices {
                    s.push_str(&alloc::format!("/{:016x}{:016x}", v[0].to_bits(), v[1].to_bits()));
                }
                s
            }
        };
        fnv1a(text.as_bytes())
    }

    pub fn build(&self) -> Result<ModelGeometry> {
        match self {
            GeometryDescriptor::Sphere { degree } => make_sphere_model(*degree),
            GeometryDescriptor::Toric { vertices, resolution, degree } => {
                let model = ToricModel::with_degree(Polygon::new(vertices)?, *resolution, *degree)?;
                Ok(ModelGeometry::from_toric(model))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Sphere(SphereModel),
    Toric(ToricModel),
}

#[derive(Debug, Clone)]
pub struct ModelGeometry {
    pub kind: ModelKind,
    /// `∫ ω_refⁿ`.
    pub volume: f64,
    pub descriptor: GeometryDescriptor,
    id: u64,
}

/// Round CP¹ truncated at harmonic degree `degree`.
pub fn make_sphere_model(degree: usize) -> Result<ModelGeometry> {
    let model = SphereModel::new(degree)?;
    let volume = model.weights.iter().sum();
    let descriptor = GeometryDescriptor::Sphere { degree };
    let id = descriptor.fingerprint();
    Ok(ModelGeometry { kind: ModelKind::Sphere(model), volume, descriptor, id })
}

/// Toric surface with the given moment polygon.
pub fn make_toric_model(vertices: &[[f64; 2]], resolution: usize) -> Result<ModelGeometry> {
    let model = ToricModel::new(Polygon::new(vertices)?, resolution)?;
    Ok(ModelGeometry::from_toric(model))
}

impl ModelGeometry {
    pub fn from_toric(model: ToricModel) -> Self {
        let volume = model.weights.iter().sum();
        let descriptor = GeometryDescriptor::Toric {
            vertices: model.polygon.vertices.clone(),
            resolution: model.resolution,
            degree: model.degree,
        };
        let id = descriptor.fingerprint();
        Self { kind: ModelKind::Toric(model), volume, descriptor, id }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ModelKind::Sphere(_))
    }

    pub fn sphere(&self) -> Option<&SphereModel> {
        match &self.kind {
            ModelKind::Sphere(s) => Some(s),
            ModelKind::Toric(_) => None,
        }
    }

    pub fn toric(&self) -> Option<&ToricModel> {
        match &self.kind {
            ModelKind::Toric(t) => Some(t),
            ModelKind::Sphere(_) => None,
        }
    }

    /// Same model at doubled quadrature resolution (and doubled degree).
    pub fn refined(&self) -> Result<ModelGeometry> {
        match &self.descriptor {
            GeometryDescriptor::Sphere { degree } => make_sphere_model(2 * degree),
            GeometryDescriptor::Toric { vertices, resolution, .. } => make_toric_model(vertices, 2 * resolution),
        }
    }

    pub fn node_count(&self) -> usize {
        self.weights().len()
    }

    pub fn basis_count(&self) -> usize {
        self.values().ncols()
    }

    /// Reference volume weights (`Σ = V`).
    pub fn weights(&self) -> &[f64] {
        match &self.kind {
            ModelKind::Sphere(s) => &s.weights,
            ModelKind::Toric(t) => &t.weights,
        }
    }

    /// Basis values at the nodes.
    pub fn values(&self) -> &DMatrix<f64> {
        match &self.kind {
            ModelKind::Sphere(s) => &s.values,
            ModelKind::Toric(t) => &t.values,
        }
    }

    /// Gradient synthesis matrices in the native frame: the orthonormal
    /// `(θ, λ)` frame on the sphere, `(∂_x, ∂_y)` on a polygon.
    pub fn gradient_matrices(&self) -> [&DMatrix<f64>; 2] {
        match &self.kind {
            ModelKind::Sphere(s) => [&s.d_theta, &s.d_lambda],
            ModelKind::Toric(t) => [&t.dx, &t.dy],
        }
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coeffs);
        (self.values() * c).as_slice().to_vec()
    }

    /// Quadrature projection onto the basis; exact for band-limited data.
    pub fn analyze(&self, grid: &[f64]) -> Vec<f64> {
        let w = self.weights();
        let wf = DVector::from_iterator(grid.len(), grid.iter().zip(w).map(|(f, w)| f * w));
        (self.values().tr_mul(&wf)).as_slice().to_vec()
    }

    /// Index of the constant basis function and its value.
    pub fn constant_mode(&self) -> (usize, f64) {
        (0, self.values()[(0, 0)])
    }

    /// `∫ f · weight dμ_ref` with a fixed summation order.
    pub fn integrate(&self, f: &[f64], weight: Weight<'_>) -> Result<f64> {
        let w = self.weights();
        if f.len() != w.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "grid function has {} values, model has {} nodes",
                f.len(),
                w.len()
            )));
        }
        Ok(match weight {
            Weight::Reference => f.iter().zip(w).map(|(a, b)| a * b).sum(),
            Weight::Volume(r) => {
                self.check(r.geometry)?;
                f.iter().zip(w).zip(&r.values).map(|((a, b), c)| a * b * c).sum()
            }
            Weight::Density(d) => {
                if d.len() != w.len() {
                    return Err(Error::InvalidArgument("density length differs from node count".into()));
                }
                f.iter().zip(w).zip(d).map(|((a, b), c)| a * b * c).sum()
            }
        })
    }

    pub fn check(&self, id: u64) -> Result<()> {
        if id == self.id {
            Ok(())
        } else {
            Err(Error::GeometryMismatch { expected: self.id, found: id })
        }
    }
}

/// Measure used by [`ModelGeometry::integrate`].
#[derive(Debug, Clone, Copy)]
pub enum Weight<'a> {
    Reference,
    /// `ω_φⁿ`.
    Volume(&'a VolumeRatio),
    /// Arbitrary density against `ω_refⁿ`.
    Density(&'a [f64]),
}

/// A potential expanded in the model basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub geometry: u64,
    pub coeffs: Vec<f64>,
}

impl PotentialField {
    pub fn zero(geom: &ModelGeometry) -> Self {
        Self { geometry: geom.id(), coeffs: alloc::vec![0.0; geom.basis_count()] }
    }

    pub fn from_coeffs(geom: &ModelGeometry, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != geom.basis_count() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} coefficients for a basis of size {}",
                coeffs.len(),
                geom.basis_count()
            )));
        }
        Ok(Self { geometry: geom.id(), coeffs })
    }

    pub fn from_grid(geom: &ModelGeometry, grid: &[f64]) -> Self {
        Self { geometry: geom.id(), coeffs: geom.analyze(grid) }
    }

    /// Single basis function with the given amplitude.
    pub fn mode(geom: &ModelGeometry, index: usize, amplitude: f64) -> Self {
        let mut f = Self::zero(geom);
        f.coeffs[index] = amplitude;
        f
    }

    pub fn grid(&self, geom: &ModelGeometry) -> Vec<f64> {
        geom.synthesize(&self.coeffs)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            geometry: self.geometry,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { geometry: self.geometry, coeffs: self.coeffs.iter().map(|a| a * s).collect() }
    }

    /// Reference mean `ψ̲ = V⁻¹∫ψ ω_refⁿ`.
    pub fn mean(&self, geom: &ModelGeometry) -> f64 {
        let (k, y0) = geom.constant_mode();
        self.coeffs[k] * y0 * geom.weights().iter().sum::<f64>() / geom.volume
    }

    /// `ψ − ψ̲`.
    pub fn mean_normalized(&self, geom: &ModelGeometry) -> Self {
        let mut out = self.clone();
        out.coeffs[geom.constant_mode().0] = 0.0;
        out
    }

    pub fn add_constant(&self, geom: &ModelGeometry, k: f64) -> Self {
        let (i, y0) = geom.constant_mode();
        let mut out = self.clone();
        out.coeffs[i] += k / y0;
        out
    }

    /// Reference L² norm.
    pub fn l2_norm(&self) -> f64 {
        crate::mathf::sqrt(self.coeffs.iter().map(|c| c * c).sum())
    }
}

/// Pointwise `ω_φⁿ / ω_refⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRatio {
    pub geometry: u64,
    pub values: Vec<f64>,
}

/// First and second derivatives of a field at the nodes.
#[derive(Debug, Clone)]
pub struct Jets {
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    /// Toric only: Hessian (xx, xy, yy) in moment coordinates.
    pub hess: Vec<[f64; 3]>,
    /// Sphere only: complex Laplacian `Δ_c f` at the reference.
    pub laplacian: Vec<f64>,
}

impl Jets {
    pub fn of(geom: &ModelGeometry, f: &PotentialField) -> Self {
        let c = DVector::from_column_slice(&f.coeffs);
        let mul = |m: &DMatrix<f64>| -> Vec<f64> { (m * &c).as_slice().to_vec() };
        let [gx, gy] = geom.gradient_matrices();
        let (gxv, gyv) = (mul(gx), mul(gy));
        let grad = gxv.iter().zip(&gyv).map(|(a, b)| [*a, *b]).collect();
        match &geom.kind {
            ModelKind::Sphere(s) => {
                let lap_c = DVector::from_iterator(c.len(), c.iter().zip(&s.eigenvalues).map(|(a, l)| -a * l));
                Jets { value: mul(&s.values), grad, hess: Vec::new(), laplacian: (&s.values * lap_c).as_slice().to_vec() }
            }
            ModelKind::Toric(t) => {
                let (xx, xy, yy) = (mul(&t.dxx), mul(&t.dxy), mul(&t.dyy));
                let hess = (0..xx.len()).map(|q| [xx[q], xy[q], yy[q]]).collect();
                Jets { value: mul(&t.values), grad, hess, laplacian: Vec::new() }
            }
        }
    }
}

/// `A_ij = ∂_j (G∇f)_i` at toric node `q`.
pub(crate) fn toric_a(t: &ToricModel, q: usize, grad: [f64; 2], hess: [f64; 3]) -> [[f64; 2]; 2] {
    let g = t.g[q];
    let gm = [[g[0], g[1]], [g[1], g[2]]];
    let hm = [[hess[0], hess[1]], [hess[1], hess[2]]];
    let mut a = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let dg = t.dg[q][j];
            let dgm = [[dg[0], dg[1]], [dg[1], dg[2]]];
            a[i][j] = (0..2).map(|k| dgm[i][k] * grad[k] + gm[i][k] * hm[k][j]).sum();
        }
    }
    a
}

/// Metric `ω_f = ω_ref + i∂∂̄f` sampled at the nodes.
#[derive(Debug, Clone)]
pub struct Metric {
    pub geometry: u64,
    pub ratio: VolumeRatio,
    /// Symmetric `S` with `⟨∇a, ∇b⟩_f = ∇aᵀ S ∇b` in the native frame.
    pub inner: Vec<[f64; 3]>,
    /// Toric only: `(I + ½A_f)⁻¹` row-major.
    pub(crate) resolvent: Vec<[f64; 4]>,
}

impl Metric {
    pub fn new(geom: &ModelGeometry, f: &PotentialField) -> Result<Self> {
        geom.check(f.geometry)?;
        Self::from_jets(geom, &Jets::of(geom, f))
    }

    pub fn reference(geom: &ModelGeometry) -> Self {
        Self::new(geom, &PotentialField::zero(geom)).expect("reference metric is admissible")
    }

    pub fn from_jets(geom: &ModelGeometry, jets: &Jets) -> Result<Self> {
        let n = geom.node_count();
        let mut ratio = Vec::with_capacity(n);
        let mut inner = Vec::with_capacity(n);
        let mut resolvent = Vec::new();
        match &geom.kind {
            ModelKind::Sphere(_) => {
                for (q, l) in jets.laplacian.iter().enumerate() {
                    let r = 1.0 + l;
                    if !(r > 0.0) {
                        return Err(Error::Inadmissible { node: q, ratio: r });
                    }
                    ratio.push(r);
                    inner.push([0.5 / r, 0.0, 0.5 / r]);
                }
            }
            ModelKind::Toric(t) => {
                resolvent.reserve(n);
                for q in 0..n {
                    let a = toric_a(t, q, jets.grad[q], jets.hess[q]);
                    let m = [[1.0 + 0.5 * a[0][0], 0.5 * a[0][1]], [0.5 * a[1][0], 1.0 + 0.5 * a[1][1]]];
                    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                    let tr = m[0][0] + m[1][1];
                    if !(det > 0.0 && tr > 0.0) {
                        return Err(Error::Inadmissible { node: q, ratio: det });
                    }
                    let inv = [m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det];
                    let g = t.g[q];
                    // ½ (I + ½A)⁻¹ G
                    let s00 = 0.5 * (inv[0] * g[0] + inv[1] * g[1]);
                    let s01 = 0.5 * (inv[0] * g[1] + inv[1] * g[2]);
                    let s10 = 0.5 * (inv[2] * g[0] + inv[3] * g[1]);
                    let s11 = 0.5 * (inv[2] * g[1] + inv[3] * g[2]);
                    ratio.push(det);
                    inner.push([s00, 0.5 * (s01 + s10), s11]);
                    resolvent.push(inv);
                }
            }
        }
        Ok(Self { geometry: geom.id(), ratio: VolumeRatio { geometry: geom.id(), values: ratio }, inner, resolvent })
    }

    /// `⟨∇a, ∇b⟩_f` at node `q`.
    pub fn pair(&self, q: usize, a: [f64; 2], b: [f64; 2]) -> f64 {
        let s = self.inner[q];
        a[0] * (s[0] * b[0] + s[1] * b[1]) + a[1] * (s[1] * b[0] + s[2] * b[1])
    }

    /// Matrix of `b ↦ Δ_f b` from basis coefficients to node values.
    pub fn laplacian_matrix(&self, geom: &ModelGeometry) -> DMatrix<f64> {
        match &geom.kind {
            ModelKind::Sphere(s) => {
                let mut m = s.values.clone();
                for k in 0..m.ncols() {
                    let l = s.eigenvalues[k];
                    for q in 0..m.nrows() {
                        m[(q, k)] *= -l / self.ratio.values[q];
                    }
                }
                m
            }
            ModelKind::Toric(t) => {
                let mut m = DMatrix::zeros(t.values.nrows(), t.values.ncols());
                for q in 0..m.nrows() {
                    let st = self.toric_stencil(t, q);
                    for k in 0..m.ncols() {
                        m[(q, k)] = st[0] * t.dx[(q, k)]
                            + st[1] * t.dy[(q, k)]
                            + st[2] * t.dxx[(q, k)]
                            + st[3] * t.dxy[(q, k)]
                            + st[4] * t.dyy[(q, k)];
                    }
                }
                m
            }
        }
    }

    /// Coefficients of `(∂_x, ∂_y, ∂_xx, ∂_xy, ∂_yy)` in `Δ_f` at a toric node.
    pub(crate) fn toric_stencil(&self, t: &ToricModel, q: usize) -> [f64; 5] {
        let m = self.resolvent[q];
        let minv = [[m[0], m[1]], [m[2], m[3]]];
        let g = t.g[q];
        let gm = [[g[0], g[1]], [g[1], g[2]]];
        let mut grad = [0.0; 2];
        for (k, gk) in grad.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..2 {
                let dg = t.dg[q][j];
                let dgm = [[dg[0], dg[1]], [dg[1], dg[2]]];
                for i in 0..2 {
                    acc += minv[j][i] * dgm[i][k];
                }
            }
            *gk = 0.5 * acc;
        }
        let mut p = [[0.0; 2]; 2];
        for j in 0..2 {
            for k in 0..2 {
                p[j][k] = 0.5 * (0..2).map(|i| minv[j][i] * gm[i][k]).sum::<f64>();
            }
        }
        [grad[0], grad[1], p[0][0], p[0][1] + p[1][0], p[1][1]]
    }

    /// `Δ_f a` at the nodes (non-positive spectrum).
    pub fn laplacian(&self, geom: &ModelGeometry, a: &Jets) -> Vec<f64> {
        match &geom.kind {
            ModelKind::Sphere(_) => a.laplacian.iter().zip(&self.ratio.values).map(|(l, r)| l / r).collect(),
            ModelKind::Toric(t) => (0..geom.node_count())
                .map(|q| {
                    let aa = toric_a(t, q, a.grad[q], a.hess[q]);
                    let m = self.resolvent[q];
                    0.5 * (m[0] * aa[0][0] + m[1] * aa[1][0] + m[2] * aa[0][1] + m[3] * aa[1][1])
                })
                .collect(),
        }
    }
}

/// Pointwise `ω_φⁿ/ω_refⁿ`; fails with the first node where the form is not positive.
pub fn volume_ratio(geom: &ModelGeometry, phi: &PotentialField) -> Result<VolumeRatio> {
    Ok(Metric::new(geom, phi)?.ratio)
}

/// Ricci potential of the model's reference form (zero on the sphere).
pub fn reference_ricci(geom: &ModelGeometry) -> Vec<f64> {
    match &geom.kind {
        ModelKind::Sphere(s) => alloc::vec![0.0; s.weights.len()],
        ModelKind::Toric(t) => t.ricci0.clone(),
    }
}

/// Ricci potential of `ω_φ` on the grid: `Ric(ω_φ) − ω_φ = i∂∂̄h`,
/// normalized by `∫ e^h ω_φⁿ = V`.
pub fn ricci_potential(geom: &ModelGeometry, phi: &PotentialField) -> Result<Vec<f64>> {
    let metric = Metric::new(geom, phi)?;
    let values = phi.grid(geom);
    Ok(ricci_from(geom, &metric, &values))
}

pub(crate) fn ricci_from(geom: &ModelGeometry, metric: &Metric, phi_grid: &[f64]) -> Vec<f64> {
    let h0 = reference_ricci(geom);
    let mut h: Vec<f64> = (0..geom.node_count()).map(|q| h0[q] - log(metric.ratio.values[q]) - phi_grid[q]).collect();
    normalize_exp(geom, &mut h, &metric.ratio.values);
    h
}

/// Shift `h` so that `∫ e^h · density dμ_ref = V`.
pub fn normalize_exp(geom: &ModelGeometry, h: &mut [f64], density: &[f64]) {
    let shift = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = h.iter().zip(density).zip(geom.weights()).map(|((a, d), w)| exp(a - shift) * d * w).sum();
    let k = shift + log(z / geom.volume);
    for v in h.iter_mut() {
        *v -= k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathf::PI;
    use crate::sphere::mode_index;

    #[test]
    fn sphere_volume_and_trivial_ratio() {
        let g = make_sphere_model(16).unwrap();
        assert!((g.volume - 4.0 * PI).abs() < 1e-12);
        let r = volume_ratio(&g, &PotentialField::zero(&g)).unwrap();
        assert!(r.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn round_trip_grid_spectral() {
        let g = make_sphere_model(8).unwrap();
        let coeffs: Vec<f64> = (0..g.basis_count()).map(|k| libm::sin(k as f64 * 1.3)).collect();
        let f = PotentialField::from_coeffs(&g, coeffs.clone()).unwrap();
        let back = PotentialField::from_grid(&g, &f.grid(&g));
        for (a, b) in back.coeffs.iter().zip(&coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_and_mismatch() {
        let g = make_sphere_model(6).unwrap();
        let f = PotentialField::mode(&g, mode_index(1, 0), 1.0).grid(&g);
        assert!(g.integrate(&f, Weight::Reference).unwrap().abs() < 1e-12);
        let other = make_sphere_model(7).unwrap();
        let r = volume_ratio(&other, &PotentialField::zero(&other)).unwrap();
        assert!(matches!(g.integrate(&f, Weight::Volume(&r)), Err(Error::GeometryMismatch { .. }) | Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn toric_volume_conservation() {
        let g = make_toric_model(&Polygon::blowup_cp2().vertices, 32).unwrap();
        let v = 8.0 * PI * PI * 4.0;
        assert!((g.volume - v).abs() < 1e-10 * v);
        let mut f = PotentialField::zero(&g);
        for k in 1..g.basis_count().min(12) {
            f.coeffs[k] = 0.02 / (k as f64);
        }
        let r = volume_ratio(&g, &f).unwrap();
        let total = g.integrate(&r.values, Weight::Reference).unwrap();
        assert!((total - v).abs() < 1e-8 * v, "{}", (total - v) / v);
    }

    #[test]
    fn toric_inner_product_is_dirichlet_form() {
        let g = make_toric_model(&Polygon::square().vertices, 24).unwrap();
        let mut f = PotentialField::zero(&g);
        f.coeffs[4] = 0.05;
        f.coeffs[7] = -0.03;
        let metric = Metric::new(&g, &f).unwrap();
        let a = Jets::of(&g, &PotentialField::mode(&g, 3, 1.0));
        let b = Jets::of(&g, &PotentialField::mode(&g, 5, 1.0));
        let lap = metric.laplacian(&g, &a);
        let lhs: f64 = (0..g.node_count())
            .map(|q| -lap[q] * b.value[q] * metric.ratio.values[q] * g.weights()[q])
            .sum();
        let rhs: f64 = (0..g.node_count())
            .map(|q| metric.pair(q, a.grad[q], b.grad[q]) * metric.ratio.values[q] * g.weights()[q])
            .sum();
        assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()), "{lhs} {rhs}");
        let lm = metric.laplacian_matrix(&g);
        for q in 0..g.node_count() {
            assert!((lm[(q, 3)] - lap[q]).abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_linearization_of_ratio() {
        let g = make_sphere_model(16).unwrap();
        let k = mode_index(2, 1);
        let eps = 1e-3;
        let r = volume_ratio(&g, &PotentialField::mode(&g, k, eps)).unwrap();
        let y = PotentialField::mode(&g, k, 1.0).grid(&g);
        for q in 0..g.node_count() {
            assert!((r.values[q] - (1.0 - 3.0 * eps * y[q])).abs() < 1e-12);
        }
    }

    #[test]
    fn ricci_potential_of_reference_vanishes() {
        let g = make_sphere_model(8).unwrap();
        let h = ricci_potential(&g, &PotentialField::zero(&g)).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-13));
    }
}
