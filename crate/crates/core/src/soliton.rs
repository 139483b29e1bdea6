//! Soliton vector field of a moment polygon and the reduced soliton equation.
//!
//! For a torus-invariant potential `f` relative to Guillemin's metric the
//! soliton equation `Ric(ω) − ω = L_X ω` reads
//! `Q(f) = log R(f) + f + X(f) − h₀ + ⟨c, x⟩ = 0`, with `X(f) = ½⟨c, G∇f⟩`.
//! Solutions are unique up to the torus complexification, which is fixed by
//! the side condition `∫ f x_k dμ = 0`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_exp, Jets, Metric, ModelGeometry, PotentialField};
use crate::mathf::{exp, log, sqrt};
use crate::quadrature::{gauss_legendre_on, polygon_rule};
use crate::toric::{Polygon, ToricModel};

const FIELD_RULE: usize = 40;

/// `(Z, ∫x e^{⟨c,x⟩}dx / Z, covariance)` on a quadrature rule.
fn tilted_moments(points: &[[f64; 2]], weights: &[f64], c: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
    let shift = points.iter().map(|x| c[0] * x[0] + c[1] * x[1]).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m = [0.0; 2];
    let mut s = [0.0; 3];
    for (x, w) in points.iter().zip(weights) {
        let e = w * exp(c[0] * x[0] + c[1] * x[1] - shift);
        z += e;
        m[0] += e * x[0];
        m[1] += e * x[1];
        s[0] += e * x[0] * x[0];
        s[1] += e * x[0] * x[1];
        s[2] += e * x[1] * x[1];
    }
    let mean = [m[0] / z, m[1] / z];
    let cov = [s[0] / z - mean[0] * mean[0], s[1] / z - mean[0] * mean[1], s[2] / z - mean[1] * mean[1]];
    (z * exp(shift), mean, cov)
}

/// Minimizer of the strictly convex `c ↦ log ∫_P e^{⟨c,x⟩} dx` on a given rule.
pub fn soliton_field_on(points: &[[f64; 2]], weights: &[f64]) -> Result<[f64; 2]> {
    let mut c = [0.0; 2];
    let mut history = Vec::new();
    for _ in 0..100 {
        let (_, m, cov) = tilted_moments(points, weights, c);
        let norm = sqrt(m[0] * m[0] + m[1] * m[1]);
        history.push(norm);
        if norm < 1e-15 {
            return Ok(c);
        }
        let det = cov[0] * cov[2] - cov[1] * cov[1];
        let step = [-(cov[2] * m[0] - cov[1] * m[1]) / det, -(-cov[1] * m[0] + cov[0] * m[1]) / det];
        c = [c[0] + step[0], c[1] + step[1]];
        if sqrt(step[0] * step[0] + step[1] * step[1]) < 1e-15 * (1.0 + sqrt(c[0] * c[0] + c[1] * c[1])) {
            return Ok(c);
        }
    }
    Err(Error::NonConvergence { what: "soliton field Newton", residuals: history })
}

/// Soliton field `c` of a polygon.
pub fn soliton_field(poly: &Polygon) -> Result<[f64; 2]> {
    let (p, w) = polygon_rule(&poly.vertices, FIELD_RULE);
    soliton_field_on(&p, &w)
}

/// `∫_P x e^{⟨c,x⟩} dx` on a fan rule with `n` nodes per direction.
pub fn moment_residual(poly: &Polygon, c: [f64; 2], n: usize) -> [f64; 2] {
    let (p, w) = polygon_rule(&poly.vertices, n);
    let (z, m, _) = tilted_moments(&p, &w, c);
    [z * m[0], z * m[1]]
}

/// One-dimensional analogue on `[a, b]`: the `c` with `∫ x e^{cx} dx = 0`.
pub fn soliton_field_interval(a: f64, b: f64) -> Result<f64> {
    let (x, w) = gauss_legendre_on(64, a, b);
    let mut c = 0.0;
    let mut history = Vec::new();
    for _ in 0..100 {
        let (mut z, mut m, mut s) = (0.0, 0.0, 0.0);
        for (xi, wi) in x.iter().zip(&w) {
            let e = wi * exp(c * xi);
            z += e;
            m += e * xi;
            s += e * xi * xi;
        }
        let mean = m / z;
        let var = s / z - mean * mean;
        history.push(mean.abs());
        if mean.abs() < 1e-15 {
            return Ok(c);
        }
        c -= mean / var;
    }
    Err(Error::NonConvergence { what: "interval soliton field", residuals: history })
}

/// Pointwise pieces of the soliton equation at a potential.
#[derive(Debug, Clone)]
pub struct SolitonEval {
    pub metric: Metric,
    pub jets: Jets,
    /// `X(f) = ½⟨c, G∇f⟩`.
    pub xf: Vec<f64>,
    /// `Q(f)` at the nodes.
    pub q: Vec<f64>,
}

pub(crate) fn toric_of(geom: &ModelGeometry) -> Result<&ToricModel> {
    geom.toric().ok_or(Error::Unsupported("soliton equation requires a toric model"))
}

/// `X(f)` from gradients at the nodes.
pub fn field_action(t: &ToricModel, c: [f64; 2], grad: &[[f64; 2]]) -> Vec<f64> {
    grad.iter()
        .zip(&t.g)
        .map(|(d, g)| 0.5 * ((c[0] * g[0] + c[1] * g[1]) * d[0] + (c[0] * g[1] + c[1] * g[2]) * d[1]))
        .collect()
}

/// `⟨c, x⟩` at the nodes.
pub fn linear_potential(t: &ToricModel, c: [f64; 2]) -> Vec<f64> {
    t.points.iter().map(|x| c[0] * x[0] + c[1] * x[1]).collect()
}

pub fn evaluate(geom: &ModelGeometry, c: [f64; 2], f: &PotentialField) -> Result<SolitonEval> {
    let t = toric_of(geom)?;
    geom.check(f.geometry)?;
    let jets = Jets::of(geom, f);
    let metric = Metric::from_jets(geom, &jets)?;
    let xf = field_action(t, c, &jets.grad);
    let q = (0..geom.node_count())
        .map(|i| {
            log(metric.ratio.values[i]) + jets.value[i] + xf[i] - t.ricci0[i]
                + c[0] * t.points[i][0]
                + c[1] * t.points[i][1]
        })
        .collect();
    Ok(SolitonEval { metric, jets, xf, q })
}

/// Node-by-basis matrix of `b ↦ X(b)`.
pub fn field_matrix(t: &ToricModel, c: [f64; 2]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t.values.nrows(), t.values.ncols());
    for q in 0..m.nrows() {
        let g = t.g[q];
        let (ax, ay) = (0.5 * (c[0] * g[0] + c[1] * g[1]), 0.5 * (c[0] * g[1] + c[1] * g[2]));
        for k in 0..m.ncols() {
            m[(q, k)] = ax * t.dx[(q, k)] + ay * t.dy[(q, k)];
        }
    }
    m
}

/// Node-by-basis matrix of the linearization `b ↦ Δ_f b + b + X(b)`.
pub fn linearization(geom: &ModelGeometry, c: [f64; 2], eval: &SolitonEval) -> Result<DMatrix<f64>> {
    let t = toric_of(geom)?;
    Ok(eval.metric.laplacian_matrix(geom) + &t.values + field_matrix(t, c))
}

/// Galerkin projection `Bᵀ W g` of a node function.
pub fn project(t: &ToricModel, g: &[f64]) -> DVector<f64> {
    let wg = DVector::from_iterator(g.len(), g.iter().zip(&t.weights).map(|(a, w)| a * w));
    t.values.tr_mul(&wg)
}

/// Galerkin coefficients of the moment coordinates, one column each.
pub fn moment_constraints(t: &ToricModel) -> DMatrix<f64> {
    let xs: Vec<f64> = t.points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = t.points.iter().map(|p| p[1]).collect();
    let mut c = DMatrix::zeros(t.values.ncols(), 2);
    c.set_column(0, &project(t, &xs));
    c.set_column(1, &project(t, &ys));
    c
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolitonData {
    pub vertices: Vec<[f64; 2]>,
    pub c: [f64; 2],
    /// Potential of `ω_KS` relative to Guillemin's metric.
    pub potential: PotentialField,
    /// `max |Q|` over the nodes.
    pub residual: f64,
    /// Norm of the Galerkin residual including the multiplier term.
    pub galerkin_residual: f64,
    /// Multipliers of the side condition; nonzero when `c` is not the soliton field.
    pub multipliers: [f64; 2],
    pub iterations: usize,
    /// Final residual after each continuation stage (empty without continuation).
    pub continuation: Vec<f64>,
    /// Whether `ω_KS` is positive at every node.
    pub convex: bool,
}

struct NewtonOutcome {
    f: PotentialField,
    lambda: [f64; 2],
    residual: f64,
    galerkin: f64,
    iterations: usize,
    history: Vec<f64>,
    converged: bool,
}

fn bordered_newton(geom: &ModelGeometry, c: [f64; 2], start: PotentialField, tol: f64) -> Result<NewtonOutcome> {
    let t = toric_of(geom)?;
    let nb = geom.basis_count();
    let cons = moment_constraints(t);
    let mut f = start;
    let mut lambda = [0.0; 2];
    let system = |f: &PotentialField, lambda: [f64; 2], eval: &SolitonEval| -> DVector<f64> {
        let r = project(t, &eval.q) + &cons * DVector::from_column_slice(&lambda);
        let fc = DVector::from_column_slice(&f.coeffs);
        let side = cons.tr_mul(&fc);
        let mut out = DVector::zeros(nb + 2);
        out.rows_mut(0, nb).copy_from(&r);
        out.rows_mut(nb, 2).copy_from(&side);
        out
    };
    let mut eval = evaluate(geom, c, &f)?;
    let mut res = system(&f, lambda, &eval);
    let mut history = vec![res.norm()];
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..60 {
        iterations = it;
        let pointwise = eval.q.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if res.norm() < 1e-13 || (pointwise < tol * 1e-2 && res.norm() < tol) {
            converged = true;
            break;
        }
        let lin = linearization(geom, c, &eval)?;
        let wl = {
            let mut m = lin;
            for q in 0..m.nrows() {
                let w = t.weights[q];
                for k in 0..m.ncols() {
                    m[(q, k)] *= w;
                }
            }
            m
        };
        let jac = t.values.tr_mul(&wl);
        let mut big = DMatrix::zeros(nb + 2, nb + 2);
        big.view_mut((0, 0), (nb, nb)).copy_from(&jac);
        big.view_mut((0, nb), (nb, 2)).copy_from(&cons);
        big.view_mut((nb, 0), (2, nb)).copy_from(&cons.transpose());
        let step = big
            .lu()
            .solve(&(-&res))
            .ok_or_else(|| Error::NonConvergence { what: "soliton Newton (singular Jacobian)", residuals: history.clone() })?;
        let merit0 = res.norm_squared();
        let mut s = 1.0;
        let mut accepted = false;
        while s > 1e-6 {
            let trial = PotentialField {
                geometry: f.geometry,
                coeffs: f.coeffs.iter().zip(step.rows(0, nb).iter()).map(|(a, d)| a + s * d).collect(),
            };
            let tl = [lambda[0] + s * step[nb], lambda[1] + s * step[nb + 1]];
            if let Ok(e) = evaluate(geom, c, &trial) {
                let r = system(&trial, tl, &e);
                if r.norm_squared() <= (1.0 - 2e-4 * s) * merit0 {
                    f = trial;
                    lambda = tl;
                    eval = e;
                    res = r;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        history.push(res.norm());
        if !accepted {
            break;
        }
    }
    let residual = eval.q.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if residual < tol {
        converged = true;
    }
    Ok(NewtonOutcome { f, lambda, residual, galerkin: res.norm(), iterations, history, converged })
}

/// Solve the reduced soliton equation for the field `c`.
pub fn solve_soliton(geom: &ModelGeometry, c: [f64; 2]) -> Result<SolitonData> {
    solve_soliton_with(geom, c, 1e-8)
}

pub fn solve_soliton_with(geom: &ModelGeometry, c: [f64; 2], tol: f64) -> Result<SolitonData> {
    let t = toric_of(geom)?;
    let zero = PotentialField::zero(geom);
    let direct = bordered_newton(geom, c, zero.clone(), tol)?;
    let (out, trace) = if direct.converged {
        (direct, Vec::new())
    } else {
        let direct_history = direct.history;
        let mut f = zero;
        let mut trace = Vec::new();
        let mut last = None;
        for j in 1..=8 {
            let cj = [c[0] * j as f64 / 8.0, c[1] * j as f64 / 8.0];
            let o = bordered_newton(geom, cj, f.clone(), tol)?;
            trace.push(o.residual);
            f = o.f.clone();
            last = Some(o);
        }
        let o = last.expect("eight continuation stages");
        if !o.converged {
            let mut residuals = direct_history;
            residuals.extend(trace);
            return Err(Error::NonConvergence { what: "soliton continuation", residuals });
        }
        (o, trace)
    };
    Ok(SolitonData {
        vertices: t.polygon.vertices.clone(),
        c,
        residual: out.residual,
        galerkin_residual: out.galerkin,
        multipliers: out.lambda,
        iterations: out.iterations,
        convex: Metric::new(geom, &out.f).is_ok(),
        potential: out.f,
        continuation: trace,
    })
}

/// Solve with a perturbed field and report the residual floor `max |Q|`
/// together with the multipliers of the side condition.
pub fn obstruction_floor(geom: &ModelGeometry, c: [f64; 2]) -> Result<(f64, [f64; 2])> {
    let o = bordered_newton(geom, c, PotentialField::zero(geom), 1e-30)?;
    Ok((o.residual, o.lambda))
}

/// Holomorphy potential `θ_X = ⟨c, x⟩ + X(f) + k` of the soliton field with
/// respect to `ω_f`, normalized by `∫ e^{θ_X} ω_fⁿ = V`.
pub fn theta_for(geom: &ModelGeometry, c: [f64; 2], f: &PotentialField) -> Result<Vec<f64>> {
    let t = toric_of(geom)?;
    let jets = Jets::of(geom, f);
    let metric = Metric::from_jets(geom, &jets)?;
    let xf = field_action(t, c, &jets.grad);
    let mut theta: Vec<f64> = linear_potential(t, c).iter().zip(&xf).map(|(a, b)| a + b).collect();
    normalize_exp(geom, &mut theta, &metric.ratio.values);
    Ok(theta)
}

/// `θ_X` on the grid for solved data.
pub fn theta_field(geom: &ModelGeometry, data: &SolitonData) -> Result<Vec<f64>> {
    theta_for(geom, data.c, &data.potential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_toric_model, ricci_potential};

    #[test]
    fn square_field_vanishes() {
        let c = soliton_field(&Polygon::square()).unwrap();
        assert!(c[0].abs() < 1e-15 && c[1].abs() < 1e-15);
    }

    #[test]
    fn interval_field_matches_bisection() {
        let c = soliton_field_interval(-1.0, 2.0).unwrap();
        assert!(c < 0.0);
        let g = |c: f64| {
            let (x, w) = gauss_legendre_on(80, -1.0, 2.0);
            x.iter().zip(&w).map(|(x, w)| w * x * exp(c * x)).sum::<f64>()
        };
        let (mut lo, mut hi) = (-10.0, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((c - 0.5 * (lo + hi)).abs() < 1e-12);
    }

    #[test]
    fn blowup_field_lies_on_symmetry_axis() {
        let p = Polygon::blowup_cp2();
        let c = soliton_field(&p).unwrap();
        assert!((c[0] - c[1]).abs() < 1e-12);
        assert!(c[0].abs() > 1e-3);
        let r = moment_residual(&p, c, 40);
        assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
    }

    #[test]
    fn square_soliton_is_reference() {
        let g = make_toric_model(&Polygon::square().vertices, 16).unwrap();
        let d = solve_soliton(&g, [0.0, 0.0]).unwrap();
        assert!(d.residual < 1e-12);
        assert!(d.potential.l2_norm() < 1e-12);
    }

    #[test]
    fn blowup_soliton_converges_and_theta_is_ricci_potential() {
        let p = Polygon::blowup_cp2();
        let g = make_toric_model(&p.vertices, 64).unwrap();
        let c = soliton_field(&p).unwrap();
        let d = solve_soliton(&g, c).unwrap();
        assert!(d.residual < 1e-8, "{}", d.residual);
        let theta = theta_field(&g, &d).unwrap();
        let h = ricci_potential(&g, &d.potential).unwrap();
        let err = theta.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }
}
