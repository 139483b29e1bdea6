//! Stated analytic properties checked numerically.

use kahler_flow_core::flow::Background;
use kahler_flow_core::functionals::{futaki, gauge_objective_value};
use kahler_flow_core::gauge::{GaugeElement, HolomorphicField};
use kahler_flow_core::geometry::{make_sphere_model, make_toric_model, Jets, Metric, ModelGeometry, PotentialField, Weight};
use kahler_flow_core::rng::KeyedRng;
use kahler_flow_core::soliton::{field_action, soliton_field, solve_soliton, theta_field, SolitonData};
use kahler_flow_core::spectral::{laplace_spectrum, weighted_operator_kernel, WeightedOperator};
use kahler_flow_core::sphere::mode_count;
use kahler_flow_core::toric::Polygon;

fn random_sphere_potential(g: &ModelGeometry, rng: &mut KeyedRng, lmax: usize, amp: f64) -> PotentialField {
    let mut f = PotentialField::zero(g);
    for k in 1..mode_count(lmax) {
        f.coeffs[k] = amp * rng.range(-1.0, 1.0);
    }
    f
}

fn random_toric_potential(g: &ModelGeometry, rng: &mut KeyedRng, terms: usize, amp: f64) -> PotentialField {
    let mut f = PotentialField::zero(g);
    for k in 1..terms {
        f.coeffs[k] = amp * rng.range(-1.0, 1.0);
    }
    f
}

fn blowup(res: usize) -> (ModelGeometry, SolitonData) {
    let p = Polygon::blowup_cp2();
    let g = make_toric_model(&p.vertices, res).unwrap();
    let data = solve_soliton(&g, soliton_field(&p).unwrap()).unwrap();
    (g, data)
}

#[test]
fn first_eigenvalue_is_one_and_gap_persists_under_small_potentials() {
    let g = make_sphere_model(16).unwrap();
    let s = laplace_spectrum(&g, &PotentialField::zero(&g), 8).unwrap();
    assert!((s.lambda1() - 1.0).abs() < 1e-8);
    let mut rng = KeyedRng::new(7, "gap");
    for _ in 0..5 {
        let phi = random_sphere_potential(&g, &mut rng, 4, 1e-3);
        let s = laplace_spectrum(&g, &phi, 8).unwrap();
        assert!(s.lambda2() >= 2.9, "{}", s.lambda2());
    }
}

fn bochner_check(g: &ModelGeometry, op: &WeightedOperator, rng: &mut KeyedRng, count: usize) {
    let nb = g.basis_count();
    for _ in 0..count {
        let c: Vec<f64> = (0..nb).map(|k| rng.normal() / (1.0 + k as f64)).collect();
        let c = op.center(g, &c);
        let (form, mass) = op.bochner_form(&c);
        assert!(form >= -1e-8 * mass.max(1.0), "{form}");
    }
    let kernel = op.kernel_indices();
    assert!(!kernel.is_empty());
    for k in kernel {
        let v = op.vectors.column(k).as_slice().to_vec();
        let (form, mass) = op.bochner_form(&v);
        assert!(form.abs() < 1e-6 * mass);
    }
}

#[test]
fn bochner_form_is_nonnegative_on_mean_zero_functions() {
    let mut rng = KeyedRng::new(11, "bochner");
    let g = make_sphere_model(12).unwrap();
    let (op, _) = weighted_operator_kernel(&g, &PotentialField::zero(&g)).unwrap();
    bochner_check(&g, &op, &mut rng, 50);
    let (t, data) = blowup(32);
    let metric = Metric::new(&t, &data.potential).unwrap();
    let theta = theta_field(&t, &data).unwrap();
    let op = WeightedOperator::with_metric(&t, &metric, &theta).unwrap();
    assert_eq!(op.kernel_indices().len(), 2);
    bochner_check(&t, &op, &mut rng, 50);
}

#[test]
fn futaki_invariant_vanishes_at_the_soliton() {
    let (g, data) = blowup(64);
    for dir in [[1.0, 0.0], [0.0, 1.0]] {
        let y = HolomorphicField::new(&g, &dir).unwrap();
        let f = futaki(&g, &data.potential, &y, data.c).unwrap();
        assert!(f.re.abs() < 1e-7, "{}", f.re);
    }
}

#[test]
fn futaki_invariant_is_metric_independent() {
    let g = make_sphere_model(16).unwrap();
    let y = HolomorphicField::new(&g, &[0.2, 0.7, -0.4]).unwrap();
    let mut rng = KeyedRng::new(3, "futaki");
    for _ in 0..2 {
        let phi = random_sphere_potential(&g, &mut rng, 3, 5e-3);
        let f = futaki(&g, &phi, &y, [0.0; 2]).unwrap();
        assert!(f.re.abs() < 1e-7 && f.im.abs() < 1e-7);
    }
    let p = Polygon::blowup_cp2();
    let t = make_toric_model(&p.vertices, 48).unwrap();
    let y = HolomorphicField::new(&t, &[1.0, -0.5]).unwrap();
    let base = futaki(&t, &PotentialField::zero(&t), &y, [0.0; 2]).unwrap().re;
    assert!(base.abs() > 1.0);
    for _ in 0..2 {
        let phi = random_toric_potential(&t, &mut rng, 10, 2e-2);
        let f = futaki(&t, &phi, &y, [0.0; 2]).unwrap().re;
        assert!((f - base).abs() < 1e-7 * base.abs(), "{f} {base}");
    }
}

#[test]
fn objective_is_nonnegative() {
    let g = make_sphere_model(10).unwrap();
    let bg = Background::ke(&g);
    let mut rng = KeyedRng::new(5, "objective");
    for _ in 0..10 {
        let phi = random_sphere_potential(&g, &mut rng, 3, 1e-2);
        let sigma = GaugeElement::boost([rng.range(-0.1, 0.1), rng.range(-0.1, 0.1), rng.range(-0.1, 0.1)]);
        assert!(gauge_objective_value(&g, &bg, &phi, &sigma).unwrap() >= -1e-10);
    }
}

#[test]
fn weighted_volume_is_preserved_and_field_identity_holds() {
    let (g, data) = blowup(32);
    let theta = theta_field(&g, &data).unwrap();
    let metric = Metric::new(&g, &data.potential).unwrap();
    let e: Vec<f64> = theta.iter().map(|v| v.exp()).collect();
    assert!((g.integrate(&e, Weight::Volume(&metric.ratio)).unwrap() - g.volume).abs() < 1e-8 * g.volume);

    // ⟨∇(θ_X + X(φ)), ∇ψ⟩_φ = X(ψ) for invariant φ, ψ.
    let t = g.toric().unwrap();
    let mut rng = KeyedRng::new(9, "identity");
    let phi = data.potential.add(&random_toric_potential(&g, &mut rng, 10, 1e-2));
    let psi = random_toric_potential(&g, &mut rng, 15, 1.0);
    let jets = Jets::of(&g, &phi);
    let metric = Metric::from_jets(&g, &jets).unwrap();
    let grad_theta: Vec<[f64; 2]> = (0..g.node_count())
        .map(|q| {
            let gm = t.g[q];
            let gm = [[gm[0], gm[1]], [gm[1], gm[2]]];
            let h = jets.hess[q];
            let hm = [[h[0], h[1]], [h[1], h[2]]];
            let mut a = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let dg = t.dg[q][j];
                    let dgm = [[dg[0], dg[1]], [dg[1], dg[2]]];
                    a[i][j] = (0..2).map(|k| dgm[i][k] * jets.grad[q][k] + gm[i][k] * hm[k][j]).sum();
                }
            }
            let c = data.c;
            [c[0] + 0.5 * (a[0][0] * c[0] + a[1][0] * c[1]), c[1] + 0.5 * (a[0][1] * c[0] + a[1][1] * c[1])]
        })
        .collect();
    let pj = Jets::of(&g, &psi);
    let xpsi = field_action(t, data.c, &pj.grad);
    let err = (0..g.node_count()).map(|q| (metric.pair(q, grad_theta[q], pj.grad[q]) - xpsi[q]).abs()).fold(0.0, f64::max);
    let scale = xpsi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(err < 1e-8 * scale, "{err}");
}
