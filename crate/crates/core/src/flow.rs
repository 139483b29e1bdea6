//! Normalized Kähler-Ricci flow as a parabolic complex Monge-Ampère equation.
//!
//! The potential `φ` relative to the background (Einstein or soliton) metric
//! obeys `φ̇ = log(ω_φⁿ/ω_bgⁿ) + φ (+ X(φ))`. States are advanced with a
//! second-order exponential Runge-Kutta scheme in the eigenbasis of the
//! linearization at the background, so the stiff linear part `Δ + 1 (+ X)`
//! is integrated exactly and only the nonlinear remainder is explicit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_exp, Jets, Metric, ModelGeometry, ModelKind, PotentialField};
use crate::mathf::{exp, expm1, log, sqrt};
use crate::soliton::{field_action, theta_for, SolitonData};
use crate::spectral::galerkin_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    Ke,
    Soliton,
}

/// Background metric the flow is expected to converge to.
#[derive(Debug, Clone)]
pub struct Background {
    pub mode: FlowMode,
    /// Potential of the background relative to the model reference.
    pub base: PotentialField,
    /// Soliton field `c` (zero in Einstein mode).
    pub field: [f64; 2],
    /// `θ_X` of the background, normalized against `ω_bgⁿ`.
    pub theta: Vec<f64>,
    /// `ω_bgⁿ/ω_refⁿ`.
    pub ratio: Vec<f64>,
}

impl Background {
    /// Reference metric as the Einstein background.
    pub fn ke(geom: &ModelGeometry) -> Self {
        let n = geom.node_count();
        Self {
            mode: FlowMode::Ke,
            base: PotentialField::zero(geom),
            field: [0.0; 2],
            theta: vec![0.0; n],
            ratio: vec![1.0; n],
        }
    }

    pub fn soliton(geom: &ModelGeometry, data: &SolitonData) -> Result<Self> {
        Self::soliton_from(geom, data.c, &data.potential)
    }

    /// Soliton background from its field and potential.
    pub fn soliton_from(geom: &ModelGeometry, c: [f64; 2], potential: &PotentialField) -> Result<Self> {
        geom.check(potential.geometry)?;
        let metric = Metric::new(geom, potential)?;
        Ok(Self {
            mode: FlowMode::Soliton,
            base: potential.clone(),
            field: c,
            theta: theta_for(geom, c, potential)?,
            ratio: metric.ratio.values,
        })
    }

    /// `θ_X` with respect to `ω_f` for a total potential `f` (relative to the
    /// model reference), using the background's normalization constant:
    /// `⟨c, x⟩ + X(f) + k`.
    pub fn theta_of_total(&self, geom: &ModelGeometry, jets: &Jets) -> Vec<f64> {
        match &geom.kind {
            ModelKind::Sphere(_) => vec![0.0; geom.node_count()],
            ModelKind::Toric(t) => {
                let base = Jets::of(geom, &self.base);
                let xb = field_action(t, self.field, &base.grad);
                let lin = crate::soliton::linear_potential(t, self.field);
                let k = self.theta[0] - lin[0] - xb[0];
                let xf = field_action(t, self.field, &jets.grad);
                (0..geom.node_count()).map(|q| lin[q] + xf[q] + k).collect()
            }
        }
    }

    /// Density `e^{θ_X} ω_bgⁿ/ω_refⁿ` of the background's weighted measure.
    pub fn density(&self) -> Vec<f64> {
        self.theta.iter().zip(&self.ratio).map(|(t, r)| exp(*t) * r).collect()
    }
}

/// Right-hand side of the flow at `φ`, with the data needed by diagnostics.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metric: Metric,
    pub jets: Jets,
    /// `X(φ)` (zero in Einstein mode).
    pub field_term: Vec<f64>,
    pub phi_dot: Vec<f64>,
}

/// Modal coordinates of the linearized operator at the background.
#[derive(Debug, Clone)]
struct ModalBasis {
    /// Linear growth rates `1 − μ_k`.
    rates: Vec<f64>,
    /// Coefficient vectors of the modes (columns).
    vectors: DMatrix<f64>,
    /// Maps node values to modal coordinates.
    projector: DMatrix<f64>,
}

/// A flow on a fixed model and background.
#[derive(Debug, Clone)]
pub struct FlowProblem<'a> {
    pub geom: &'a ModelGeometry,
    pub background: Background,
    basis: ModalBasis,
}

impl<'a> FlowProblem<'a> {
    pub fn new(geom: &'a ModelGeometry, background: Background) -> Result<Self> {
        geom.check(background.base.geometry)?;
        let density = background.density();
        let (rates, vectors) = match (&geom.kind, background.mode) {
            (ModelKind::Sphere(s), FlowMode::Ke) => {
                let nb = s.basis_count();
                (s.eigenvalues.iter().map(|l| 1.0 - l).collect(), DMatrix::identity(nb, nb))
            }
            _ => {
                let metric = Metric::new(geom, &background.base)?;
                let g = galerkin_spectrum(geom, &metric, &density)?;
                (g.eigenvalues.iter().map(|m| 1.0 - m).collect(), g.vectors)
            }
        };
        let b = geom.values();
        let mut wb = b.clone();
        for (q, w) in geom.weights().iter().enumerate() {
            let s = w * density[q];
            for k in 0..wb.ncols() {
                wb[(q, k)] *= s;
            }
        }
        let projector = vectors.tr_mul(&wb.transpose());
        Ok(Self { geom, background, basis: ModalBasis { rates, vectors, projector } })
    }

    pub fn mode(&self) -> FlowMode {
        self.background.mode
    }

    /// Linear rates `1 − μ_k` of the modal coordinates, ascending in `μ`.
    pub fn rates(&self) -> &[f64] {
        &self.basis.rates
    }

    /// `φ̇` at `φ` (relative to the background).
    pub fn evaluate(&self, phi: &PotentialField) -> Result<Evaluation> {
        self.geom.check(phi.geometry)?;
        let total = self.background.base.add(phi);
        let jets = Jets::of(self.geom, &total);
        let metric = Metric::from_jets(self.geom, &jets)?;
        let n = self.geom.node_count();
        let phi_dot: Vec<f64>;
        let field_term: Vec<f64>;
        match &self.geom.kind {
            ModelKind::Sphere(_) => {
                field_term = vec![0.0; n];
                phi_dot = (0..n).map(|q| log(metric.ratio.values[q]) + jets.value[q]).collect();
            }
            ModelKind::Toric(t) => {
                let c = self.background.field;
                let x_total = field_action(t, c, &jets.grad);
                let x_base = field_action(t, c, &Jets::of(self.geom, &self.background.base).grad);
                field_term = x_total.iter().zip(&x_base).map(|(a, b)| a - b).collect();
                phi_dot = (0..n)
                    .map(|q| {
                        log(metric.ratio.values[q]) + jets.value[q] + x_total[q] - t.ricci0[q]
                            + c[0] * t.points[q][0]
                            + c[1] * t.points[q][1]
                    })
                    .collect();
            }
        }
        Ok(Evaluation { metric, jets, field_term, phi_dot })
    }

    /// Density against `ω_refⁿ` used for `c(t)` and `H̃₀`: `ω_φⁿ` in Einstein
    /// mode, `e^{h̃} ω_φⁿ` with `h̃ = θ_X + X(φ) − φ̇` (normalized) in soliton mode.
    pub fn weight_density(&self, eval: &Evaluation) -> Vec<f64> {
        match self.background.mode {
            FlowMode::Ke => eval.metric.ratio.values.clone(),
            FlowMode::Soliton => {
                let n = self.geom.node_count();
                let mut h: Vec<f64> =
                    (0..n).map(|q| self.background.theta[q] + eval.field_term[q] - eval.phi_dot[q]).collect();
                normalize_exp(self.geom, &mut h, &eval.metric.ratio.values);
                (0..n).map(|q| exp(h[q]) * eval.metric.ratio.values[q]).collect()
            }
        }
    }

    fn to_modal(&self, phi: &PotentialField) -> DVector<f64> {
        let grid = phi.grid(self.geom);
        &self.basis.projector * DVector::from_column_slice(&grid)
    }

    fn from_modal(&self, z: &DVector<f64>) -> PotentialField {
        PotentialField { geometry: self.geom.id(), coeffs: (&self.basis.vectors * z).as_slice().to_vec() }
    }

    /// Nonlinear remainder `N(z) = Π φ̇(Vz) − Λ z`.
    fn remainder(&self, z: &DVector<f64>) -> Result<(DVector<f64>, Evaluation)> {
        let phi = self.from_modal(z);
        let eval = self.evaluate(&phi)?;
        let proj = &self.basis.projector * DVector::from_column_slice(&eval.phi_dot);
        let lin = DVector::from_iterator(z.len(), z.iter().zip(&self.basis.rates).map(|(a, r)| a * r));
        Ok((proj - lin, eval))
    }

    /// Build a state at time `t` from a potential.
    pub fn state(&self, t: f64, phi: PotentialField, step: f64) -> Result<FlowState> {
        let eval = self.evaluate(&phi)?;
        Ok(self.state_from(t, phi, &eval, step))
    }

    fn state_from(&self, t: f64, phi: PotentialField, eval: &Evaluation, step: f64) -> FlowState {
        let density = self.weight_density(eval);
        let c = normalization_constant(self.geom, &eval.phi_dot, &density);
        let min_ratio = eval.metric.ratio.values.iter().copied().fold(f64::INFINITY, f64::min);
        FlowState { t, phi, phi_dot: eval.phi_dot.clone(), c, step, admissible: min_ratio > 0.0, min_ratio }
    }
}

/// `φ_k(x)` for `k = 1, 2`.
fn phi_functions(x: f64) -> (f64, f64) {
    if x.abs() < 1e-5 {
        (1.0 + x / 2.0 + x * x / 6.0, 0.5 + x / 6.0 + x * x / 24.0)
    } else {
        let e = expm1(x);
        (e / x, (e - x) / (x * x))
    }
}

/// `c = ∫ φ̇ ρ dμ_ref / ∫ ρ dμ_ref`.
pub fn normalization_constant(geom: &ModelGeometry, phi_dot: &[f64], density: &[f64]) -> f64 {
    let w = geom.weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for q in 0..w.len() {
        num += phi_dot[q] * density[q] * w[q];
        den += density[q] * w[q];
    }
    num / den
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub phi: PotentialField,
    pub phi_dot: Vec<f64>,
    pub c: f64,
    pub step: f64,
    pub admissible: bool,
    /// Smallest volume ratio over the nodes.
    pub min_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-14, initial_step: 1e-2, max_step: 0.05, min_step: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub mode: FlowMode,
    /// Initial potential; mean-normalized on entry.
    pub initial: PotentialField,
    pub eps0: f64,
    pub n: usize,
    pub horizon: f64,
    pub control: StepControl,
    /// Time between recorded states.
    pub cadence: f64,
}

impl FlowConfig {
    pub fn new(mode: FlowMode, initial: PotentialField, horizon: f64) -> Self {
        Self { mode, initial, eps0: 1e-2, n: 10, horizon, control: StepControl::default(), cadence: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: FlowMode,
    pub states: Vec<FlowState>,
    pub accepted: usize,
    pub rejected: usize,
    /// Whether the initial potential satisfied the `ε₀` bound in the proxy norm.
    pub within_eps0: bool,
    pub initial_norm: f64,
    pub notes: Vec<String>,
}

/// Sobolev proxy `(V⁻¹ Σ (1+μ_k)^{s} z_k²)^{1/2}` for a mean-zero potential,
/// with `μ_k` the background eigenvalues.
pub fn sobolev_proxy(problem: &FlowProblem<'_>, phi: &PotentialField, s: i32) -> f64 {
    let z = problem.to_modal(&phi.mean_normalized(problem.geom));
    let total: f64 = z
        .iter()
        .zip(&problem.basis.rates)
        .map(|(a, r)| {
            let mu = 1.0 - r;
            if mu.abs() < 1e-9 {
                0.0
            } else {
                crate::mathf::powi(1.0 + mu, s) * a * a
            }
        })
        .sum();
    sqrt(total / problem.geom.volume)
}

/// One adaptive step attempt from `z` with step `h`: returns the new modal
/// state, its evaluation and the local error estimate.
fn etd2_step(
    problem: &FlowProblem<'_>,
    z: &DVector<f64>,
    n0: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, Evaluation, f64)> {
    let rates = &problem.basis.rates;
    let m = z.len();
    let mut a = DVector::zeros(m);
    let mut p2 = vec![0.0; m];
    for k in 0..m {
        let x = h * rates[k];
        let (p1, q2) = phi_functions(x);
        a[k] = exp(x) * z[k] + h * p1 * n0[k];
        p2[k] = q2;
    }
    let (na, _) = problem.remainder(&a)?;
    let mut out = a.clone();
    let mut err = 0.0f64;
    for k in 0..m {
        let corr = h * p2[k] * (na[k] - n0[k]);
        out[k] += corr;
        err += corr * corr;
    }
    let eval = problem.evaluate(&problem.from_modal(&out))?;
    Ok((out, eval, sqrt(err)))
}

/// Advance the flow from `config.initial` to `config.horizon`.
pub fn run(config: &FlowConfig, problem: &FlowProblem<'_>) -> Result<Trajectory> {
    if config.mode != problem.mode() {
        return Err(Error::InvalidArgument("flow mode does not match the background".into()));
    }
    if !(config.eps0 > 0.0) {
        return Err(Error::InvalidArgument("eps0 must be positive".into()));
    }
    let geom = problem.geom;
    let psi = config.initial.mean_normalized(geom);
    // Reject inadmissible data before any stepping.
    let eval0 = problem.evaluate(&psi)?;
    let initial_norm = sobolev_proxy(problem, &psi, 4);
    let mut notes = Vec::new();
    let within_eps0 = initial_norm <= config.eps0;
    if !within_eps0 {
        notes.push(alloc::format!("initial W^(4,2) proxy {initial_norm:.3e} exceeds eps0 {:.1e}", config.eps0));
    }
    let ctl = &config.control;
    let mut z = problem.to_modal(&psi);
    let mut t = 0.0;
    let mut h = ctl.initial_step.min(ctl.max_step);
    let mut states = vec![problem.state_from(0.0, psi, &eval0, h)];
    let mut next_record = config.cadence;
    let (mut accepted, mut rejected) = (0, 0);
    let (mut n0, _) = problem.remainder(&z)?;
    while t < config.horizon - 1e-12 {
        let target = next_record.min(config.horizon);
        let hh = h.min(target - t);
        let attempt = etd2_step(problem, &z, &n0, hh);
        let tol = ctl.rtol * z.norm() + ctl.atol;
        match attempt {
            Ok((znew, eval, err)) if err <= tol => {
                accepted += 1;
                t += hh;
                z = znew;
                n0 = problem.remainder(&z)?.0;
                if err < tol / 16.0 && hh == h {
                    h = (2.0 * h).min(ctl.max_step);
                }
                if (t - target).abs() < 1e-12 {
                    t = target;
                    states.push(problem.state_from(t, problem.from_modal(&z), &eval, hh));
                    next_record = target + config.cadence;
                }
            }
            other => {
                rejected += 1;
                h = 0.5 * hh;
                if h < ctl.min_step {
                    let reason = match other {
                        Err(e) => alloc::format!("{e}"),
                        Ok((_, _, err)) => alloc::format!("error estimate {err:e} above tolerance {tol:e}"),
                    };
                    return Err(Error::StepFailure { time: t, step: h, reason });
                }
            }
        }
    }
    Ok(Trajectory { mode: config.mode, states, accepted, rejected, within_eps0, initial_norm, notes })
}

/// Configuration continuing from a recorded state, optionally transformed
/// by a gauge map `φ ↦ σ*φ + ρ_σ` supplied by the caller.
pub fn restart_from(
    config: &FlowConfig,
    problem: &FlowProblem<'_>,
    trajectory: &Trajectory,
    index: usize,
    gauge: Option<&dyn Fn(&PotentialField) -> Result<PotentialField>>,
) -> Result<FlowConfig> {
    let state = trajectory
        .states
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("no recorded state {index}")))?;
    let phi = match gauge {
        Some(g) => g(&state.phi)?,
        None => state.phi.clone(),
    };
    problem.evaluate(&phi)?;
    let mut out = config.clone();
    out.initial = phi;
    out.horizon = (config.horizon - state.t).max(0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_sphere_model;
    use crate::sphere::mode_index;

    #[test]
    fn zero_is_fixed_point() {
        let g = make_sphere_model(8).unwrap();
        let p = FlowProblem::new(&g, Background::ke(&g)).unwrap();
        let tr = run(&FlowConfig::new(FlowMode::Ke, PotentialField::zero(&g), 1.0), &p).unwrap();
        for s in &tr.states {
            assert!(s.phi.l2_norm() == 0.0);
        }
    }

    #[test]
    fn degree_two_mode_decays_at_rate_two() {
        let g = make_sphere_model(12).unwrap();
        let p = FlowProblem::new(&g, Background::ke(&g)).unwrap();
        let k = mode_index(2, 0);
        let tr = run(&FlowConfig::new(FlowMode::Ke, PotentialField::mode(&g, k, 1e-3), 2.0), &p).unwrap();
        let a0 = tr.states[0].phi.coeffs[k];
        let a1 = tr.states.last().unwrap().phi.coeffs[k];
        let rate = -log(a1 / a0) / 2.0;
        assert!((rate - 2.0).abs() < 0.1, "{rate}");
    }

    #[test]
    fn degree_one_mode_is_neutral() {
        let g = make_sphere_model(12).unwrap();
        let p = FlowProblem::new(&g, Background::ke(&g)).unwrap();
        let k = mode_index(1, 1);
        let tr = run(&FlowConfig::new(FlowMode::Ke, PotentialField::mode(&g, k, 1e-3), 2.0), &p).unwrap();
        let a0 = tr.states[0].phi.coeffs[k];
        let a1 = tr.states.last().unwrap().phi.coeffs[k];
        assert!((log(a1 / a0) / 2.0).abs() < 0.05);
    }

    #[test]
    fn stored_phi_dot_matches_recomputation_and_c_is_mean() {
        let g = make_sphere_model(10).unwrap();
        let p = FlowProblem::new(&g, Background::ke(&g)).unwrap();
        let psi = PotentialField::mode(&g, mode_index(2, 1), 1e-2).add(&PotentialField::mode(&g, mode_index(3, -2), 5e-3));
        let tr = run(&FlowConfig::new(FlowMode::Ke, psi, 0.5), &p).unwrap();
        for s in &tr.states {
            let e = p.evaluate(&s.phi).unwrap();
            let drift = e.phi_dot.iter().zip(&s.phi_dot).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-12);
            let dev: Vec<f64> = s.phi_dot.iter().map(|v| v - s.c).collect();
            let m = g.integrate(&dev, crate::geometry::Weight::Density(&e.metric.ratio.values)).unwrap();
            assert!(m.abs() < 1e-10);
        }
    }
}
