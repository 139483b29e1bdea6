use kahler_flow_core::flow::{Background, FlowProblem};
use kahler_flow_core::functionals::{fit_window, gauge_objective_value, h0, hk, htilde0};
use kahler_flow_core::gauge::{gauge_potential, pullback, GaugeElement};
use kahler_flow_core::geometry::{make_sphere_model, GeometryDescriptor, ModelGeometry, PotentialField, Weight};
use kahler_flow_core::rng::KeyedRng;
use kahler_flow_core::sphere::mode_index;
use kahler_flow_core::toric::Polygon;
use proptest::prelude::*;
use std::sync::OnceLock;

fn sphere() -> &'static ModelGeometry {
    static G: OnceLock<ModelGeometry> = OnceLock::new();
    G.get_or_init(|| make_sphere_model(10).unwrap())
}

fn potential(coeffs: &[f64]) -> PotentialField {
    let g = sphere();
    let mut f = PotentialField::zero(g);
    for (k, c) in coeffs.iter().enumerate() {
        f.coeffs[k + 1] = *c;
    }
    f
}

fn small_coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4e-3..4e-3f64, 15)
}

fn boost() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-0.3..0.3f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn h_functionals_are_nonnegative(c in small_coeffs()) {
        let g = sphere();
        let p = FlowProblem::new(g, Background::ke(g)).unwrap();
        let s = p.state(0.0, potential(&c), 0.0).unwrap();
        prop_assert!(h0(&p, &s).unwrap() >= 0.0);
        prop_assert!(htilde0(&p, &s).unwrap() >= 0.0);
        for k in 1..=3 {
            prop_assert!(hk(&p, &s, k).unwrap() >= -1e-18);
        }
    }

    #[test]
    fn gauge_potentials_keep_volume(b in boost()) {
        let g = sphere();
        let rho = gauge_potential(g, &Background::ke(g), &GaugeElement::boost(b)).unwrap();
        let e: Vec<f64> = rho.grid(g).iter().map(|v| (-v).exp()).collect();
        prop_assert!((g.integrate(&e, Weight::Reference).unwrap() / g.volume - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lorentz_inverse_cancels(b in boost(), axis in prop::array::uniform3(0.1..1.0f64), angle in -3.0..3.0f64) {
        let a = GaugeElement::rotation(axis, angle).compose(&GaugeElement::boost(b)).unwrap();
        let GaugeElement::Sphere { lorentz } = a.compose(&a.inverse()).unwrap() else { unreachable!() };
        for i in 0..4 {
            for j in 0..4 {
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((lorentz[i][j] - id).abs() < 1e-12);
            }
        }
        prop_assert!((GaugeElement::boost(b).distance() - (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rotations_leave_functionals_invariant(c in small_coeffs(), angle in -3.0..3.0f64) {
        let g = sphere();
        let bg = Background::ke(g);
        let rot = GaugeElement::rotation([0.0, 0.0, 1.0], angle);
        prop_assert!(gauge_potential(g, &bg, &rot).unwrap().l2_norm() < 1e-12);
        let phi = potential(&c);
        let moved = pullback(g, &bg, &rot, &phi).unwrap();
        let p = FlowProblem::new(g, bg).unwrap();
        let a = h0(&p, &p.state(0.0, phi, 0.0).unwrap()).unwrap();
        let b = h0(&p, &p.state(0.0, moved, 0.0).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
    }

    #[test]
    fn objective_vanishes_only_on_pure_gauge(b in boost(), c in small_coeffs()) {
        let g = sphere();
        let bg = Background::ke(g);
        let sigma = GaugeElement::boost([b[0] / 3.0, b[1] / 3.0, b[2] / 3.0]);
        let pure = gauge_potential(g, &bg, &sigma).unwrap();
        prop_assert!(gauge_objective_value(g, &bg, &pure, &sigma).unwrap().abs() < 1e-8);
        let mut phi = pure.add(&potential(&c));
        phi.coeffs[mode_index(2, 0)] += 1e-3;
        prop_assert!(gauge_objective_value(g, &bg, &phi, &sigma).unwrap() > 0.0);
    }

    #[test]
    fn exponential_fits_are_exact_on_exponentials(rate in 0.1..5.0f64, amp in -3.0..3.0f64) {
        let t: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|s| (amp - rate * s).exp()).collect();
        let f = fit_window(&t, &y).unwrap();
        prop_assert!((f.rate - rate).abs() < 1e-9);
        prop_assert!((f.log_amplitude - amp).abs() < 1e-9);
    }

    #[test]
    fn keyed_streams_are_reproducible(seed in any::<u64>(), purpose in "[a-z]{1,12}") {
        let mut a = KeyedRng::new(seed, &purpose);
        let mut b = KeyedRng::new(seed, &purpose);
        let mut other = KeyedRng::new(seed, &format!("{purpose}!"));
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| other.next_u64()).collect();
        prop_assert_eq!(&xs, &ys);
        prop_assert_ne!(&xs, &zs);
        let u = a.uniform();
        prop_assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn descriptors_round_trip(degree in 4usize..40, res in 8usize..80) {
        let d = GeometryDescriptor::Sphere { degree };
        let back: GeometryDescriptor = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        prop_assert_eq!(back, d);
        let t = GeometryDescriptor::Toric { vertices: Polygon::blowup_cp2().vertices, resolution: res, degree: res / 3 };
        let back: GeometryDescriptor = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn polygons_scaled_about_the_origin_stay_valid(s in 0.2..3.0f64) {
        let v: Vec<[f64; 2]> = Polygon::blowup_cp2().vertices.iter().map(|p| [s * p[0], s * p[1]]).collect();
        let p = Polygon::new(&v).unwrap();
        prop_assert!((p.area() - 4.0 * s * s).abs() < 1e-12);
        prop_assert!(p.contains([0.0, 0.0]));
        for (vert, n) in p.vertices.iter().zip(&p.normals) {
            prop_assert!((vert[0] * n[0] + vert[1] * n[1] - 1.0).abs() < 1e-12);
        }
    }
}
