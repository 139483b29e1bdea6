//! Weighted Laplace spectra, the first eigenspace, and the operator
//! `P = Δ + 1 + ⟨∇h, ∇·⟩`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{ricci_from, Metric, ModelGeometry, ModelKind, PotentialField};
use crate::mathf::{exp, sqrt};

/// Dimension of the first eigenspace at the reference Einstein or soliton
/// metric for invariant data: three on the sphere, two torus generators on a
/// polygon.
pub fn lambda1_dimension(geom: &ModelGeometry) -> usize {
    match geom.kind {
        ModelKind::Sphere(_) => 3,
        ModelKind::Toric(_) => 2,
    }
}

/// Mass and stiffness matrices of `∫ b_i b_j ρ dμ_ref` and
/// `∫ ⟨∇b_i, ∇b_j⟩ ρ dμ_ref`, where `ρ` is a density against the reference.
pub fn galerkin_matrices(geom: &ModelGeometry, metric: &Metric, density: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = geom.weights();
    let b = geom.values();
    let [gx, gy] = geom.gradient_matrices();
    let n = geom.node_count();
    let rho: Vec<f64> = (0..n).map(|q| density[q] * w[q]).collect();
    let mut wb = b.clone();
    let mut sx = gx.clone();
    let mut sy = gy.clone();
    for q in 0..n {
        let s = metric.inner[q];
        let (d00, d01, d11) = (s[0] * rho[q], s[1] * rho[q], s[2] * rho[q]);
        for k in 0..b.ncols() {
            wb[(q, k)] *= rho[q];
            let (ax, ay) = (gx[(q, k)], gy[(q, k)]);
            sx[(q, k)] = d00 * ax + d01 * ay;
            sy[(q, k)] = d01 * ax + d11 * ay;
        }
    }
    let mass = b.tr_mul(&wb);
    let stiff = gx.tr_mul(&sx) + gy.tr_mul(&sy);
    (symmetrize(mass), symmetrize(stiff))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Complete Galerkin eigen-decomposition of `−Δ_φ` under a density.
#[derive(Debug, Clone)]
pub struct GalerkinSpectrum {
    pub geometry: u64,
    pub density: Vec<f64>,
    /// Ascending, including the zero eigenvalue of constants.
    pub eigenvalues: Vec<f64>,
    /// Coefficient vectors, orthonormal under the mass matrix.
    pub vectors: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

pub fn galerkin_spectrum(geom: &ModelGeometry, metric: &Metric, density: &[f64]) -> Result<GalerkinSpectrum> {
    geom.check(metric.geometry)?;
    let (mass, stiffness) = galerkin_matrices(geom, metric, density);
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("weighted mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&stiffness)
        .ok_or_else(|| Error::InvalidArgument("singular mass factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::InvalidArgument("singular mass factor".into()))?;
    let c = symmetrize(c);
    let eig = SymmetricEigen::try_new(c.clone(), 1e-15, 10_000).ok_or_else(|| Error::NonConvergence {
        what: "symmetric eigensolver",
        residuals: Vec::new(),
    })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let nb = c.nrows();
    let mut z = DMatrix::zeros(nb, nb);
    let mut values = Vec::with_capacity(nb);
    for (col, &k) in order.iter().enumerate() {
        z.set_column(col, &eig.eigenvectors.column(k));
        values.push(eig.eigenvalues[k]);
    }
    let vectors = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::InvalidArgument("singular mass factor".into()))?;
    Ok(GalerkinSpectrum { geometry: geom.id(), density: density.to_vec(), eigenvalues: values, vectors, mass, stiffness })
}

impl GalerkinSpectrum {
    /// Residual norms `‖K v − λ M v‖` per eigenpair.
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.eigenvalues.len())
            .map(|k| {
                let v = self.vectors.column(k);
                (&self.stiffness * v - &self.mass * v * self.eigenvalues[k]).norm()
            })
            .collect()
    }
}

/// Lowest nonzero eigenpairs with the first-eigenspace split.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub geometry: u64,
    /// Density against `ω_refⁿ` defining the inner product.
    pub density: Vec<f64>,
    /// Nonzero eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenfunctions as coefficient columns, orthonormal under the density.
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
    /// Number of leading eigenfunctions spanning `Λ₁`.
    pub lambda1_dim: usize,
}

impl SpectralDecomposition {
    pub fn from_galerkin(g: &GalerkinSpectrum, count: usize, lambda1_dim: usize) -> Self {
        let nb = g.eigenvalues.len();
        let count = count.min(nb - 1);
        let res = g.residuals();
        Self {
            geometry: g.geometry,
            density: g.density.clone(),
            eigenvalues: g.eigenvalues[1..=count].to_vec(),
            vectors: g.vectors.columns(1, count).into_owned(),
            residuals: res[1..=count].to_vec(),
            lambda1_dim,
        }
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// First eigenvalue past the `Λ₁` block.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[self.lambda1_dim]
    }

    /// `δ₀` with `λ₂ = 1 + δ₀`.
    pub fn gap(&self) -> f64 {
        self.lambda2() - 1.0
    }
}

/// Lowest `count` nonzero eigenpairs of `−Δ_φ` with the plain volume form.
pub fn laplace_spectrum(geom: &ModelGeometry, phi: &PotentialField, count: usize) -> Result<SpectralDecomposition> {
    let metric = Metric::new(geom, phi)?;
    let density = metric.ratio.values.clone();
    let g = galerkin_spectrum(geom, &metric, &density)?;
    Ok(SpectralDecomposition::from_galerkin(&g, count, lambda1_dimension(geom)))
}

/// Same with density `e^w ω_φⁿ`.
pub fn weighted_spectrum(
    geom: &ModelGeometry,
    phi: &PotentialField,
    w: &[f64],
    count: usize,
) -> Result<SpectralDecomposition> {
    let metric = Metric::new(geom, phi)?;
    let density: Vec<f64> = metric.ratio.values.iter().zip(w).map(|(r, h)| r * exp(*h)).collect();
    let g = galerkin_spectrum(geom, &metric, &density)?;
    Ok(SpectralDecomposition::from_galerkin(&g, count, lambda1_dimension(geom)))
}

/// Ricci potential of `ω_φ` on the grid.
pub fn ricci_potential(geom: &ModelGeometry, phi: &PotentialField) -> Result<Vec<f64>> {
    crate::geometry::ricci_potential(geom, phi)
}

/// Weighted inner product of two grid functions under a density.
pub fn weighted_dot(geom: &ModelGeometry, density: &[f64], a: &[f64], b: &[f64]) -> f64 {
    geom.weights().iter().enumerate().map(|(q, w)| w * density[q] * a[q] * b[q]).sum()
}

/// Split of a potential into mean, `Λ₁` and complement parts.
#[derive(Debug, Clone)]
pub struct Lambda1Split {
    pub mean: f64,
    /// Coordinates along the `Λ₁` eigenfunctions.
    pub coordinates: Vec<f64>,
    pub component: PotentialField,
    pub complement: PotentialField,
}

/// Decompose `f = mean + f_Λ₁ + f^⊥` with `f^⊥ ⊥ Λ₁ ∪ ℝ` under the basis weight.
pub fn project_lambda1(geom: &ModelGeometry, f: &PotentialField, basis: &SpectralDecomposition) -> Result<Lambda1Split> {
    geom.check(f.geometry)?;
    geom.check(basis.geometry)?;
    let grid = f.grid(geom);
    let ones = alloc::vec![1.0; grid.len()];
    let total = weighted_dot(geom, &basis.density, &ones, &ones);
    let mean = weighted_dot(geom, &basis.density, &grid, &ones) / total;
    let b = geom.values();
    let mut comp = DVector::zeros(geom.basis_count());
    let mut coordinates = Vec::with_capacity(basis.lambda1_dim);
    for k in 0..basis.lambda1_dim {
        let v = basis.vectors.column(k);
        let vg = b * v;
        let a = weighted_dot(geom, &basis.density, &grid, vg.as_slice());
        coordinates.push(a);
        comp += v * a;
    }
    let component = PotentialField { geometry: geom.id(), coeffs: comp.as_slice().to_vec() };
    let complement = f.sub(&component).add_constant(geom, -mean);
    Ok(Lambda1Split { mean, coordinates, component, complement })
}

/// Spectrum of `P` on `(ω_φ, e^h ω_φⁿ)` through its quadratic form
/// `−∫(Pψ)ψ e^h ω_φⁿ = ∫(‖∇ψ‖² − ψ²) e^h ω_φⁿ`.
#[derive(Debug, Clone)]
pub struct WeightedOperator {
    pub geometry: u64,
    pub weight: Vec<f64>,
    pub density: Vec<f64>,
    /// Eigenvalues of `−P` (including `−1` from constants), ascending.
    pub eigenvalues: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

impl WeightedOperator {
    pub fn new(geom: &ModelGeometry, phi: &PotentialField, h: &[f64]) -> Result<Self> {
        let metric = Metric::new(geom, phi)?;
        Self::with_metric(geom, &metric, h)
    }

    pub fn with_metric(geom: &ModelGeometry, metric: &Metric, h: &[f64]) -> Result<Self> {
        let density: Vec<f64> = metric.ratio.values.iter().zip(h).map(|(r, w)| r * exp(*w)).collect();
        let g = galerkin_spectrum(geom, metric, &density)?;
        Ok(Self {
            geometry: geom.id(),
            weight: h.to_vec(),
            density,
            eigenvalues: g.eigenvalues.iter().map(|l| l - 1.0).collect(),
            vectors: g.vectors,
            mass: g.mass,
            stiffness: g.stiffness,
        })
    }

    /// First eigenvalue of `−P` beyond the near-kernel, used as the gap scale.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.iter().copied().find(|&e| e > 0.5).unwrap_or(f64::NAN) + 1.0
    }

    /// Indices with `|eigenvalue| < 1e−6·λ₂`.
    pub fn kernel_indices(&self) -> Vec<usize> {
        let tol = 1e-6 * self.lambda2();
        (0..self.eigenvalues.len()).filter(|&k| self.eigenvalues[k].abs() < tol).collect()
    }

    pub fn kernel(&self, geom: &ModelGeometry) -> Vec<PotentialField> {
        self.kernel_indices()
            .into_iter()
            .map(|k| PotentialField { geometry: geom.id(), coeffs: self.vectors.column(k).as_slice().to_vec() })
            .collect()
    }

    /// `∫(‖∇ψ‖² − ψ²) e^h ω_φⁿ` and `∫ψ² e^h ω_φⁿ` for coefficient vector `c`.
    pub fn bochner_form(&self, c: &[f64]) -> (f64, f64) {
        let v = DVector::from_column_slice(c);
        let m = v.dot(&(&self.mass * &v));
        let k = v.dot(&(&self.stiffness * &v));
        (k - m, m)
    }

    /// Remove the weighted mean of a coefficient vector.
    pub fn center(&self, geom: &ModelGeometry, c: &[f64]) -> Vec<f64> {
        let (k0, y0) = geom.constant_mode();
        let v = DVector::from_column_slice(c);
        let one = DVector::from_fn(c.len(), |i, _| if i == k0 { 1.0 / y0 } else { 0.0 });
        let mean = one.dot(&(&self.mass * &v)) / one.dot(&(&self.mass * &one));
        (v - one * mean).as_slice().to_vec()
    }

    /// `‖K v − λ M v‖ / ‖M v‖` for a kernel vector.
    pub fn kernel_residual(&self, c: &[f64]) -> f64 {
        let v = DVector::from_column_slice(c);
        let mv = &self.mass * &v;
        (&self.stiffness * &v - &mv).norm() / sqrt(mv.norm_squared().max(1e-300))
    }
}

/// Kernel of `P` at `ω_φ` with `h` its Ricci potential.
pub fn weighted_operator_kernel(geom: &ModelGeometry, phi: &PotentialField) -> Result<(WeightedOperator, Vec<PotentialField>)> {
    let metric = Metric::new(geom, phi)?;
    let h = ricci_from(geom, &metric, &phi.grid(geom));
    let op = WeightedOperator::with_metric(geom, &metric, &h)?;
    let kernel = op.kernel(geom);
    Ok((op, kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_sphere_model, make_toric_model};
    use crate::sphere::mode_index;
    use crate::toric::Polygon;

    #[test]
    fn round_sphere_spectrum() {
        let g = make_sphere_model(16).unwrap();
        let s = laplace_spectrum(&g, &PotentialField::zero(&g), 10).unwrap();
        for k in 0..3 {
            assert!((s.eigenvalues[k] - 1.0).abs() < 1e-10);
        }
        for k in 3..8 {
            assert!((s.eigenvalues[k] - 3.0).abs() < 1e-10);
        }
        assert!((s.eigenvalues[8] - 6.0).abs() < 1e-10);
        assert!(s.residuals.iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn square_spectrum_is_sum_of_factors() {
        let g = make_toric_model(&Polygon::square().vertices, 32).unwrap();
        let s = laplace_spectrum(&g, &PotentialField::zero(&g), 6).unwrap();
        let expect = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0];
        for (a, b) in s.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn projection_splits_modes() {
        let g = make_sphere_model(8).unwrap();
        let s = laplace_spectrum(&g, &PotentialField::zero(&g), 8).unwrap();
        let f = PotentialField::mode(&g, mode_index(1, 1), 0.3)
            .add(&PotentialField::mode(&g, mode_index(2, -1), 0.2))
            .add_constant(&g, 0.7);
        let split = project_lambda1(&g, &f, &s).unwrap();
        assert!((split.mean - 0.7).abs() < 1e-12);
        assert!((split.component.coeffs[mode_index(1, 1)] - 0.3).abs() < 1e-12);
        assert!(split.complement.coeffs[mode_index(1, 1)].abs() < 1e-12);
        assert!((split.complement.coeffs[mode_index(2, -1)] - 0.2).abs() < 1e-12);
        let again = project_lambda1(&g, &split.component, &s).unwrap();
        for (a, b) in again.component.coeffs.iter().zip(&split.component.coeffs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn sphere_kernel_of_p_is_degree_one() {
        let g = make_sphere_model(10).unwrap();
        let (op, ker) = weighted_operator_kernel(&g, &PotentialField::zero(&g)).unwrap();
        assert_eq!(ker.len(), 3);
        for k in &ker {
            assert!(op.kernel_residual(&k.coeffs) < 1e-10);
            let deg1: f64 = (1..4).map(|i| k.coeffs[i] * k.coeffs[i]).sum();
            assert!((deg1 / k.l2_norm().powi(2) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn square_kernel_of_p_has_dimension_two() {
        let g = make_toric_model(&Polygon::square().vertices, 24).unwrap();
        let (_, ker) = weighted_operator_kernel(&g, &PotentialField::zero(&g)).unwrap();
        assert_eq!(ker.len(), 2);
    }
}
