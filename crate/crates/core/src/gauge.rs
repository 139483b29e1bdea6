//! Action of the reductive automorphism group on potentials.
//!
//! On the sphere an automorphism is a Lorentz transformation acting by
//! Möbius maps `x ↦ x'/t'`, `(t', x') = Λ(1, x)`; its potential is
//! `ρ_σ = 2 log t'`. On a toric model the complexified torus acts by
//! translation `ξ ↦ ξ + s` of the log-affine coordinate `ξ = ∇u₀(x)`, and
//! `ρ_σ` is the difference of the background Kähler potential at `ξ + s` and `ξ`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Background, FlowMode, FlowProblem, Trajectory};
use crate::geometry::{Jets, Metric, ModelGeometry, ModelKind, PotentialField};
use crate::mathf::{cos, cosh, exp, log, sin, sinh, sqrt, PI};
use crate::soliton::field_action;
use crate::sphere::{evaluate_at, mode_index};
use crate::toric::{guillemin_jet, invert_guillemin_gradient};

/// Element of the reductive automorphism group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeElement {
    Sphere { lorentz: [[f64; 4]; 4] },
    Toric { shift: [f64; 2] },
}

fn identity4() -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

impl GaugeElement {
    pub fn identity(geom: &ModelGeometry) -> Self {
        match geom.kind {
            ModelKind::Sphere(_) => GaugeElement::Sphere { lorentz: identity4() },
            ModelKind::Toric(_) => GaugeElement::Toric { shift: [0.0; 2] },
        }
    }

    /// Pure boost with rapidity vector `b`.
    pub fn boost(b: [f64; 3]) -> Self {
        let s = sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
        let mut m = identity4();
        if s > 0.0 {
            let n = [b[0] / s, b[1] / s, b[2] / s];
            let (ch, sh) = (cosh(s), sinh(s));
            m[0][0] = ch;
            for i in 0..3 {
                m[0][i + 1] = sh * n[i];
                m[i + 1][0] = sh * n[i];
                for j in 0..3 {
                    m[i + 1][j + 1] += (ch - 1.0) * n[i] * n[j];
                }
            }
        }
        GaugeElement::Sphere { lorentz: m }
    }

    /// Rotation by `angle` about the unit `axis`.
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        let nrm = sqrt(axis.iter().map(|a| a * a).sum());
        let k = [axis[0] / nrm, axis[1] / nrm, axis[2] / nrm];
        let (c, s) = (cos(angle), sin(angle));
        let mut m = identity4();
        let cross = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                m[i + 1][j + 1] = c * id + s * cross[i][j] + (1.0 - c) * k[i] * k[j];
            }
        }
        GaugeElement::Sphere { lorentz: m }
    }

    pub fn shift(s: [f64; 2]) -> Self {
        GaugeElement::Toric { shift: s }
    }

    /// Element with the given boost or shift parameters.
    pub fn from_parameters(geom: &ModelGeometry, p: &[f64]) -> Self {
        match geom.kind {
            ModelKind::Sphere(_) => Self::boost([p[0], p[1], p[2]]),
            ModelKind::Toric(_) => Self::shift([p[0], p[1]]),
        }
    }

    /// Boost rapidity vector (sphere) or shift (toric).
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            GaugeElement::Sphere { lorentz } => {
                let v = [lorentz[1][0], lorentz[2][0], lorentz[3][0]];
                let sh = sqrt(v.iter().map(|a| a * a).sum());
                if sh == 0.0 {
                    return vec![0.0; 3];
                }
                let s = libm::asinh(sh);
                v.iter().map(|a| a / sh * s).collect()
            }
            GaugeElement::Toric { shift } => shift.to_vec(),
        }
    }

    /// Size of the non-isometric part.
    pub fn distance(&self) -> f64 {
        sqrt(self.parameters().iter().map(|a| a * a).sum())
    }

    /// Element whose pullback is `pullback(self, pullback(inner, ·))`.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        match (self, inner) {
            (GaugeElement::Sphere { lorentz: a }, GaugeElement::Sphere { lorentz: b }) => {
                Ok(GaugeElement::Sphere { lorentz: mul4(b, a) })
            }
            (GaugeElement::Toric { shift: a }, GaugeElement::Toric { shift: b }) => {
                Ok(GaugeElement::Toric { shift: [a[0] + b[0], a[1] + b[1]] })
            }
            _ => Err(Error::InvalidArgument("composing gauge elements of different models".into())),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            GaugeElement::Sphere { lorentz } => {
                // Λ⁻¹ = η Λᵀ η
                let mut m = [[0.0; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        let si = if i == 0 { 1.0 } else { -1.0 };
                        let sj = if j == 0 { 1.0 } else { -1.0 };
                        m[i][j] = si * sj * lorentz[j][i];
                    }
                }
                GaugeElement::Sphere { lorentz: m }
            }
            GaugeElement::Toric { shift } => GaugeElement::Toric { shift: [-shift[0], -shift[1]] },
        }
    }

    fn check(&self, geom: &ModelGeometry) -> Result<()> {
        match (self, &geom.kind) {
            (GaugeElement::Sphere { .. }, ModelKind::Sphere(_)) | (GaugeElement::Toric { .. }, ModelKind::Toric(_)) => Ok(()),
            _ => Err(Error::InvalidArgument("gauge element does not act on this model".into())),
        }
    }
}

/// Image `σ(x)` of a unit vector and the factor `t'(x)`.
pub fn mobius(lorentz: &[[f64; 4]; 4], x: [f64; 3]) -> ([f64; 3], f64) {
    let v = [1.0, x[0], x[1], x[2]];
    let w: Vec<f64> = (0..4).map(|i| (0..4).map(|k| lorentz[i][k] * v[k]).sum()).collect();
    let t = w[0];
    let y = [w[1] / t, w[2] / t, w[3] / t];
    let n = sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    ([y[0] / n, y[1] / n, y[2] / n], t)
}

/// Node images and raw (unnormalized) gauge potentials.
struct Action {
    values_phi: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

/// Evaluate the fields at `σ(node)` and the unnormalized `ρ_σ` at the nodes.
fn act(geom: &ModelGeometry, bg: &Background, sigma: &GaugeElement, fields: &[&PotentialField]) -> Result<Action> {
    sigma.check(geom)?;
    match (&geom.kind, sigma) {
        (ModelKind::Sphere(s), GaugeElement::Sphere { lorentz }) => {
            let mut values_phi = vec![Vec::with_capacity(s.points.len()); fields.len()];
            let mut rho = Vec::with_capacity(s.points.len());
            for &x in &s.points {
                let (y, t) = mobius(lorentz, x);
                if !(t > 0.0) {
                    return Err(Error::InvalidArgument("Lorentz map is not orthochronous".into()));
                }
                rho.push(2.0 * log(t));
                for (v, f) in values_phi.iter_mut().zip(fields) {
                    v.push(evaluate_at(s.degree, &f.coeffs, y));
                }
            }
            Ok(Action { values_phi, rho })
        }
        (ModelKind::Toric(t), GaugeElement::Toric { shift }) => {
            let poly = &t.polygon;
            let mut images = Vec::with_capacity(t.points.len());
            let mut rho = Vec::with_capacity(t.points.len());
            for &x in &t.points {
                let (u, xi, _) = guillemin_jet(poly, x);
                let target = [xi[0] + shift[0], xi[1] + shift[1]];
                let y = invert_guillemin_gradient(poly, target, x)?;
                let (uy, _, _) = guillemin_jet(poly, y);
                let dual_y = y[0] * target[0] + y[1] * target[1] - uy;
                let dual_x = x[0] * xi[0] + x[1] * xi[1] - u;
                rho.push(2.0 * (dual_y - dual_x));
                images.push(y);
            }
            let mut coeffs: Vec<&[f64]> = vec![&bg.base.coeffs];
            coeffs.extend(fields.iter().map(|f| f.coeffs.as_slice()));
            let mut vals = t.evaluate_many(&images, &coeffs);
            let at_image = vals.remove(0);
            let base_here = bg.base.grid(geom);
            for q in 0..rho.len() {
                rho[q] += at_image[q] - base_here[q];
            }
            Ok(Action { values_phi: vals, rho })
        }
        _ => Err(Error::InvalidArgument("gauge element does not act on this model".into())),
    }
}

/// `ρ_σ` in spectral form with the normalization
/// `∫ e^{−ρ} ω_bgⁿ = V` (Einstein) or `∫ e^{−ρ−X(ρ)} ω_bgⁿ = V` (soliton).
pub fn gauge_potential(geom: &ModelGeometry, bg: &Background, sigma: &GaugeElement) -> Result<PotentialField> {
    let a = act(geom, bg, sigma, &[])?;
    let rho = PotentialField::from_grid(geom, &a.rho);
    normalize_gauge(geom, bg, rho)
}

fn normalize_gauge(geom: &ModelGeometry, bg: &Background, rho: PotentialField) -> Result<PotentialField> {
    let grid = rho.grid(geom);
    let extra: Vec<f64> = match (&geom.kind, bg.mode) {
        (ModelKind::Toric(t), FlowMode::Soliton) => field_action(t, bg.field, &Jets::of(geom, &rho).grad),
        _ => vec![0.0; grid.len()],
    };
    let w = geom.weights();
    let e: Vec<f64> = (0..grid.len()).map(|q| -grid[q] - extra[q]).collect();
    let shift = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..grid.len()).map(|q| exp(e[q] - shift) * bg.ratio[q] * w[q]).sum();
    // ∫ e^{−ρ−k} = V  ⇒  k = log(∫e^{−ρ}/V)
    let k = shift + log(z / geom.volume);
    Ok(rho.add_constant(geom, k))
}

/// `σ*φ + ρ_σ` for `φ` relative to the background.
pub fn pullback(geom: &ModelGeometry, bg: &Background, sigma: &GaugeElement, phi: &PotentialField) -> Result<PotentialField> {
    geom.check(phi.geometry)?;
    let a = act(geom, bg, sigma, &[phi])?;
    let rho = normalize_gauge(geom, bg, PotentialField::from_grid(geom, &a.rho))?;
    let moved = PotentialField::from_grid(geom, &a.values_phi[0]);
    Ok(moved.add(&rho))
}

/// Real part of an element of `η_r(M)`, represented by its holomorphy
/// potential at the model reference: a linear function of the embedding
/// (sphere) or of the moment coordinates (toric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolomorphicField {
    pub direction: Vec<f64>,
    pub reference: PotentialField,
}

impl HolomorphicField {
    pub fn new(geom: &ModelGeometry, direction: &[f64]) -> Result<Self> {
        let reference = match &geom.kind {
            ModelKind::Sphere(_) => {
                if direction.len() != 3 {
                    return Err(Error::InvalidArgument("sphere fields take a 3-vector".into()));
                }
                let scale = sqrt(4.0 * PI / 3.0);
                let mut f = PotentialField::zero(geom);
                f.coeffs[mode_index(1, 1)] = scale * direction[0];
                f.coeffs[mode_index(1, -1)] = scale * direction[1];
                f.coeffs[mode_index(1, 0)] = scale * direction[2];
                f
            }
            ModelKind::Toric(t) => {
                if direction.len() != 2 {
                    return Err(Error::InvalidArgument("toric fields take a 2-vector".into()));
                }
                let g: Vec<f64> = t.points.iter().map(|x| direction[0] * x[0] + direction[1] * x[1]).collect();
                PotentialField::from_grid(geom, &g)
            }
        };
        Ok(Self { direction: direction.to_vec(), reference })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { direction: self.direction.iter().map(|d| d * s).collect(), reference: self.reference.scaled(s) }
    }

    /// `Y(g) = ⟨∇θ_Y, ∇g⟩_ref` from node gradients of `g`.
    pub fn apply(&self, geom: &ModelGeometry, grad: &[[f64; 2]]) -> Vec<f64> {
        let r = Jets::of(geom, &self.reference);
        let reference = Metric::reference(geom);
        (0..geom.node_count()).map(|q| reference.pair(q, r.grad[q], grad[q])).collect()
    }

    /// `(JY)(g)`; identically zero on torus-invariant data.
    pub fn apply_imaginary(&self, geom: &ModelGeometry, grad: &[[f64; 2]]) -> Vec<f64> {
        match geom.kind {
            ModelKind::Sphere(_) => {
                let r = Jets::of(geom, &self.reference);
                (0..geom.node_count())
                    .map(|q| 0.5 * (r.grad[q][0] * grad[q][1] - r.grad[q][1] * grad[q][0]))
                    .collect()
            }
            ModelKind::Toric(_) => vec![0.0; geom.node_count()],
        }
    }

    /// Holomorphy potential `θ_Y + Y(f)` with respect to `ω_f`, `f` total.
    pub fn potential(&self, geom: &ModelGeometry, total: &Jets) -> Vec<f64> {
        let base = self.reference.grid(geom);
        let y = self.apply(geom, &total.grad);
        base.iter().zip(&y).map(|(a, b)| a + b).collect()
    }

    /// One-parameter subgroup `exp(tY)`.
    pub fn exp(&self, t: f64) -> GaugeElement {
        let d: Vec<f64> = self.direction.iter().map(|v| 0.5 * t * v).collect();
        if d.len() == 3 {
            GaugeElement::boost([d[0], d[1], d[2]])
        } else {
            GaugeElement::shift([d[0], d[1]])
        }
    }
}

/// Remove the mean of `g` under a density.
pub fn center(geom: &ModelGeometry, g: &mut [f64], density: &[f64]) {
    let w = geom.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for q in 0..g.len() {
        num += g[q] * density[q] * w[q];
        den += density[q] * w[q];
    }
    let m = num / den;
    for v in g.iter_mut() {
        *v -= m;
    }
}

/// Basis of `η_r` on invariant data, normalized by `∫‖Y‖² ω_bgⁿ = 1`.
pub fn eta_basis(geom: &ModelGeometry, bg: &Background) -> Result<Vec<HolomorphicField>> {
    let dim = match geom.kind {
        ModelKind::Sphere(_) => 3,
        ModelKind::Toric(_) => 2,
    };
    let jets = Jets::of(geom, &bg.base);
    let metric = Metric::from_jets(geom, &jets)?;
    let w = geom.weights();
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut dir = vec![0.0; dim];
        dir[k] = 1.0;
        let y = HolomorphicField::new(geom, &dir)?;
        let grads = potential_gradient(geom, &y, &jets);
        let norm2: f64 = (0..geom.node_count())
            .map(|q| metric.pair(q, grads[q], grads[q]) * metric.ratio.values[q] * w[q])
            .sum();
        out.push(y.scaled(1.0 / sqrt(norm2)));
    }
    Ok(out)
}

/// Node gradients of `θ_Y + Y(f)`.
fn potential_gradient(geom: &ModelGeometry, y: &HolomorphicField, total: &Jets) -> Vec<[f64; 2]> {
    let r = Jets::of(geom, &y.reference);
    match &geom.kind {
        // Only used at the round background, where `f` is constant.
        ModelKind::Sphere(_) => r.grad.clone(),
        ModelKind::Toric(t) => (0..geom.node_count())
            .map(|q| {
                let a = crate::geometry::toric_a(t, q, total.grad[q], total.hess[q]);
                let v = &y.direction;
                [
                    r.grad[q][0] + 0.5 * (v[0] * a[0][0] + v[1] * a[1][0]),
                    r.grad[q][1] + 0.5 * (v[0] * a[0][1] + v[1] * a[1][1]),
                ]
            })
            .collect(),
    }
}

/// `∫ θ'_Y φ e^{θ_X} ω_bgⁿ` for each basis field, `θ'_Y` centered.
pub fn lambda1_pairing(geom: &ModelGeometry, bg: &Background, basis: &[HolomorphicField], phi: &PotentialField) -> Vec<f64> {
    let jets = Jets::of(geom, &bg.base);
    let density = bg.density();
    let grid = phi.grid(geom);
    let w = geom.weights();
    basis
        .iter()
        .map(|y| {
            let mut th = y.potential(geom, &jets);
            center(geom, &mut th, &density);
            (0..grid.len()).map(|q| th[q] * grid[q] * density[q] * w[q]).sum()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeFix {
    pub sigma: GaugeElement,
    pub phi_sigma: PotentialField,
    /// Max pairing with `Λ₁` after each Newton iteration.
    pub residuals: Vec<f64>,
}

/// Newton on the boost parameters until `σ*φ + ρ_σ ⊥ Λ₁`.
pub fn orthogonalize_ke(geom: &ModelGeometry, bg: &Background, phi: &PotentialField, start: Option<&GaugeElement>) -> Result<GaugeFix> {
    if bg.mode != FlowMode::Ke {
        return Err(Error::InvalidArgument("orthogonalization by Newton applies in Einstein mode".into()));
    }
    let basis = eta_basis(geom, bg)?;
    let d = basis.len();
    let mut p = match start {
        Some(s) => s.parameters(),
        None => vec![0.0; d],
    };
    let pairing = |p: &[f64]| -> Result<(Vec<f64>, PotentialField)> {
        let s = GaugeElement::from_parameters(geom, p);
        let f = pullback(geom, bg, &s, phi)?;
        Ok((lambda1_pairing(geom, bg, &basis, &f), f))
    };
    let (mut r, mut f) = pairing(&p)?;
    let scale = 1.0 + phi.l2_norm();
    let mut history = vec![max_abs(&r)];
    for _ in 0..30 {
        if max_abs(&r) < 1e-13 * scale {
            return Ok(GaugeFix { sigma: GaugeElement::from_parameters(geom, &p), phi_sigma: f, residuals: history });
        }
        let h = 1e-6;
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[j] += h;
            pm[j] -= h;
            let (rp, _) = pairing(&pp)?;
            let (rm, _) = pairing(&pm)?;
            for i in 0..d {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let step = jac
            .lu()
            .solve(&(-DVector::from_column_slice(&r)))
            .ok_or_else(|| Error::NonConvergence { what: "gauge Newton (singular Jacobian)", residuals: history.clone() })?;
        let before = max_abs(&r);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let (rt, ft) = pairing(&trial)?;
            if max_abs(&rt) < before || t < 1e-4 {
                p = trial;
                r = rt;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        history.push(max_abs(&r));
        if history.len() > 3 && history[history.len() - 1] >= history[history.len() - 2] && max_abs(&r) < 1e-10 * scale {
            return Ok(GaugeFix { sigma: GaugeElement::from_parameters(geom, &p), phi_sigma: f, residuals: history });
        }
    }
    if max_abs(&r) < 1e-10 * scale {
        return Ok(GaugeFix { sigma: GaugeElement::from_parameters(geom, &p), phi_sigma: f, residuals: history });
    }
    Err(Error::NonConvergence { what: "gauge orthogonalization", residuals: history })
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|a| a.abs()).fold(0.0, f64::max)
}

/// Outcome of minimizing the gauge objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeCertificate {
    /// `max_Y |D𝓕(σ)(Y)|` over the unit basis.
    pub derivative_bound: f64,
    /// `max_Y |∫ θ'_Y (τ*φ + ρ_τ) e^{θ_X} ω_bgⁿ|` with `τ = σ⁻¹`.
    pub pairing_bound: f64,
    /// `‖X'(φ)‖_{C⁰}`; zero for torus-invariant data.
    pub x_prime: f64,
    pub objective: f64,
    pub iterations: usize,
    pub trust_radius: f64,
    pub enlarged: bool,
    pub unresolved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeMinimization {
    pub sigma: GaugeElement,
    /// `τ*φ + ρ_τ` with `τ = σ⁻¹`, the gauge-fixed potential.
    pub phi_gauge: PotentialField,
    pub certificate: GaugeCertificate,
}

/// Trust-region Newton for `𝓕(σ)` using the exact derivative along
/// right translations and a finite-difference Hessian.
pub fn minimize_gauge_objective(
    geom: &ModelGeometry,
    bg: &Background,
    phi: &PotentialField,
    trust_radius: f64,
    start: Option<&GaugeElement>,
    tolerance: f64,
) -> Result<GaugeMinimization> {
    use crate::functionals::objective_derivative;
    let basis = eta_basis(geom, bg)?;
    let d = basis.len();
    let mut sigma = start.cloned().unwrap_or_else(|| GaugeElement::identity(geom));
    let mut radius = trust_radius;
    let mut enlarged = false;
    let mut unresolved = false;
    let mut g = objective_derivative(geom, bg, phi, &sigma, &basis)?;
    let mut local = 0.5 * trust_radius;
    let mut iterations = 0;
    let scale = 1.0 + phi.l2_norm();
    while iterations < 60 {
        if max_abs(&g) <= tolerance * scale {
            break;
        }
        iterations += 1;
        let h = 1e-5;
        let mut hess = DMatrix::zeros(d, d);
        for j in 0..d {
            let sp = basis[j].exp(h).compose(&sigma)?;
            let sm = basis[j].exp(-h).compose(&sigma)?;
            let gp = objective_derivative(geom, bg, phi, &sp, &basis)?;
            let gm = objective_derivative(geom, bg, phi, &sm, &basis)?;
            for i in 0..d {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let gv = DVector::from_column_slice(&g);
        let newton = hess.clone().cholesky().map(|c| -c.solve(&gv));
        let mut step = match newton {
            Some(s) => s,
            None => -&gv * (local / gv.norm()),
        };
        if step.norm() > local {
            step *= local / step.norm();
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = sigma.clone();
            for (k, y) in basis.iter().enumerate() {
                trial = y.exp(step[k]).compose(&trial)?;
            }
            match objective_derivative(geom, bg, phi, &trial, &basis) {
                Ok(gt) if max_abs(&gt) < max_abs(&g) => {
                    sigma = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
                _ => {
                    step *= 0.5;
                    local = (0.5 * local).max(1e-12);
                }
            }
        }
        if !accepted {
            break;
        }
        if sigma.distance() > radius {
            if enlarged {
                unresolved = true;
                break;
            }
            radius *= 2.0;
            enlarged = true;
        }
    }
    if max_abs(&g) > tolerance * scale {
        unresolved = true;
    }
    let tau = sigma.inverse();
    let phi_gauge = pullback(geom, bg, &tau, phi)?;
    let pairing = lambda1_pairing(geom, bg, &basis, &phi_gauge);
    let objective = crate::functionals::gauge_objective_value(geom, bg, phi, &sigma)?;
    Ok(GaugeMinimization {
        sigma,
        phi_gauge,
        certificate: GaugeCertificate {
            derivative_bound: max_abs(&g),
            pairing_bound: max_abs(&pairing),
            x_prime: 0.0,
            objective,
            iterations,
            trust_radius: radius,
            enlarged,
            unresolved,
        },
    })
}

/// Gauge-fixed data at one recorded state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeTrackEntry {
    pub t: f64,
    pub parameters: Vec<f64>,
    pub phi_gauge: Option<PotentialField>,
    /// RMS of the mean-normalized gauge-fixed potential.
    pub gauge_norm: f64,
    /// RMS of the `Λ₁` content of the raw potential.
    pub raw_lambda1: f64,
    /// RMS of the mean-normalized raw potential.
    pub raw_norm: f64,
    pub error: Option<alloc::string::String>,
}

/// RMS `(V⁻¹∫(f − f̲)² dμ_ref)^{1/2}`.
pub fn rms(geom: &ModelGeometry, f: &PotentialField) -> f64 {
    f.mean_normalized(geom).l2_norm() / sqrt(geom.volume)
}

/// Gauge-fix every `cadence`-th recorded state, warm-starting each solve from
/// the previous element.
pub fn gauge_track(problem: &FlowProblem<'_>, trajectory: &Trajectory, cadence: usize) -> Vec<GaugeTrackEntry> {
    let geom = problem.geom;
    let bg = &problem.background;
    let basis = match eta_basis(geom, bg) {
        Ok(b) => b,
        Err(_) => Vec::new(),
    };
    let mut warm: Option<GaugeElement> = None;
    let mut out = Vec::new();
    for s in trajectory.states.iter().step_by(cadence.max(1)) {
        let pair = lambda1_pairing(geom, bg, &basis, &s.phi);
        let raw_lambda1 = sqrt(pair.iter().map(|a| a * a).sum::<f64>() / geom.volume);
        let raw_norm = rms(geom, &s.phi);
        let solved = match bg.mode {
            FlowMode::Ke => orthogonalize_ke(geom, bg, &s.phi, warm.as_ref()).map(|g| (g.sigma, g.phi_sigma)),
            FlowMode::Soliton => minimize_gauge_objective(geom, bg, &s.phi, 1.0, warm.as_ref().map(|w| w.inverse()).as_ref(), 1e-12)
                .map(|m| (m.sigma.inverse(), m.phi_gauge)),
        };
        match solved {
            Ok((sigma, phi_gauge)) => {
                out.push(GaugeTrackEntry {
                    t: s.t,
                    parameters: sigma.parameters(),
                    gauge_norm: rms(geom, &phi_gauge),
                    phi_gauge: Some(phi_gauge),
                    raw_lambda1,
                    raw_norm,
                    error: None,
                });
                warm = Some(sigma);
            }
            Err(e) => out.push(GaugeTrackEntry {
                t: s.t,
                parameters: Vec::new(),
                phi_gauge: None,
                gauge_norm: f64::NAN,
                raw_lambda1,
                raw_norm,
                error: Some(alloc::format!("{e}")),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_sphere_model, make_toric_model, volume_ratio, Weight};
    use crate::soliton::{soliton_field, solve_soliton};
    use crate::toric::Polygon;

    #[test]
    fn sphere_gauge_potential_solves_einstein_equation() {
        let g = make_sphere_model(16).unwrap();
        let bg = Background::ke(&g);
        let sigma = GaugeElement::boost([0.1, -0.05, 0.2]);
        let rho = gauge_potential(&g, &bg, &sigma).unwrap();
        let r = volume_ratio(&g, &rho).unwrap();
        let grid = rho.grid(&g);
        let err = (0..g.node_count()).map(|q| (r.values[q] - exp(-grid[q])).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let e: Vec<f64> = grid.iter().map(|v| exp(-v)).collect();
        assert!((g.integrate(&e, Weight::Reference).unwrap() - g.volume).abs() < 1e-10 * g.volume);
    }

    #[test]
    fn rotations_are_neutral_and_identity_is_trivial() {
        let g = make_sphere_model(10).unwrap();
        let bg = Background::ke(&g);
        let rho = gauge_potential(&g, &bg, &GaugeElement::rotation([0.3, 0.1, 1.0], 0.7)).unwrap();
        assert!(rho.l2_norm() < 1e-12);
        let rho = gauge_potential(&g, &bg, &GaugeElement::identity(&g)).unwrap();
        assert!(rho.l2_norm() < 1e-14);
    }

    #[test]
    fn composition_law_on_sphere() {
        let g = make_sphere_model(16).unwrap();
        let bg = Background::ke(&g);
        let phi = PotentialField::mode(&g, mode_index(2, 1), 1e-2);
        let a = GaugeElement::boost([0.05, 0.0, 0.02]);
        let b = GaugeElement::boost([0.0, -0.04, 0.03]);
        let lhs = pullback(&g, &bg, &a.compose(&b).unwrap(), &phi).unwrap();
        let rhs = pullback(&g, &bg, &a, &pullback(&g, &bg, &b, &phi).unwrap()).unwrap();
        let d = lhs.sub(&rhs).mean_normalized(&g).l2_norm();
        assert!(d < 1e-9, "{d}");
        let inv = pullback(&g, &bg, &a.inverse(), &pullback(&g, &bg, &a, &phi).unwrap()).unwrap();
        assert!(inv.sub(&phi).mean_normalized(&g).l2_norm() < 1e-9);
    }

    #[test]
    fn orthogonalization_removes_degree_one_content() {
        let g = make_sphere_model(12).unwrap();
        let bg = Background::ke(&g);
        let eps = 1e-3;
        let phi = PotentialField::mode(&g, mode_index(1, 0), eps);
        let fix = orthogonalize_ke(&g, &bg, &phi, None).unwrap();
        let l1: f64 = (1..4).map(|k| fix.phi_sigma.coeffs[k].abs()).fold(0.0, f64::max);
        assert!(l1 < 1e-10);
        assert!(fix.phi_sigma.mean_normalized(&g).l2_norm() < 10.0 * eps * eps);
        let again = orthogonalize_ke(&g, &bg, &fix.phi_sigma, None).unwrap();
        assert!(again.sigma.distance() < 1e-8);
        let phi2 = PotentialField::mode(&g, mode_index(2, 0), eps);
        assert!(orthogonalize_ke(&g, &bg, &phi2, None).unwrap().sigma.distance() < 1e-10);
    }

    #[test]
    fn toric_shift_normalization_and_cocycle() {
        let p = Polygon::blowup_cp2();
        let g = make_toric_model(&p.vertices, 64).unwrap();
        let c = soliton_field(&p).unwrap();
        let data = solve_soliton(&g, c).unwrap();
        let bg = Background::soliton(&g, &data).unwrap();
        let a = GaugeElement::shift([0.1, -0.2]);
        let b = GaugeElement::shift([-0.05, 0.15]);
        let rho = gauge_potential(&g, &bg, &a).unwrap();
        let jets = Jets::of(&g, &rho);
        let xr = field_action(g.toric().unwrap(), c, &jets.grad);
        let grid = rho.grid(&g);
        let e: Vec<f64> = (0..grid.len()).map(|q| exp(-grid[q] - xr[q])).collect();
        let total = g.integrate(&e, Weight::Density(&bg.ratio)).unwrap();
        assert!((total - g.volume).abs() < 1e-10 * g.volume);
        let rab = gauge_potential(&g, &bg, &a.compose(&b).unwrap()).unwrap();
        let via = pullback(&g, &bg, &a, &gauge_potential(&g, &bg, &b).unwrap()).unwrap();
        let d = rab.sub(&via).mean_normalized(&g).l2_norm();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn objective_minimization_recovers_pure_gauge() {
        let p = Polygon::blowup_cp2();
        let g = make_toric_model(&p.vertices, 32).unwrap();
        let data = solve_soliton(&g, soliton_field(&p).unwrap()).unwrap();
        let bg = Background::soliton(&g, &data).unwrap();
        let target = GaugeElement::shift([0.08, -0.05]);
        let phi = gauge_potential(&g, &bg, &target).unwrap();
        let m = minimize_gauge_objective(&g, &bg, &phi, 1.0, None, 1e-10).unwrap();
        assert!(!m.certificate.unresolved);
        let p = m.sigma.parameters();
        assert!((p[0] - 0.08).abs() < 1e-6 && (p[1] + 0.05).abs() < 1e-6, "{p:?}");
        assert!(m.certificate.objective.abs() < 1e-10);
        assert!(rms(&g, &m.phi_gauge) < 1e-6);
    }
}
