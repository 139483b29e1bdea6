//! Gauss rules on intervals and on triangles fanned from the origin.

use alloc::vec::Vec;

use crate::mathf::{cos, fabs, PI};

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * n * (n + 1.0) * if x > 0.0 { 1.0 } else if (n as usize) % 2 == 0 { -1.0 } else { 1.0 }
    } else {
        n * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Gauss-Legendre rule with `n` points on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if fabs(dx) < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|&t| mid + half * t).collect(), w.iter().map(|&v| v * half).collect())
}

/// Collapsed tensor rule on the triangle `(0, a, b)`.
///
/// Points are `s (a + t (b - a))` for Gauss nodes `s, t ∈ [0, 1]`; the weight
/// carries the Jacobian `s |det(a, b)|`. Returns `(points, weights)`.
pub fn fan_triangle(n: usize, a: [f64; 2], b: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let (s, ws) = gauss_legendre_on(n, 0.0, 1.0);
    let (t, wt) = gauss_legendre_on(n, 0.0, 1.0);
    let det = fabs(a[0] * b[1] - a[1] * b[0]);
    let mut pts = Vec::with_capacity(n * n);
    let mut wts = Vec::with_capacity(n * n);
    for (i, &si) in s.iter().enumerate() {
        for (j, &tj) in t.iter().enumerate() {
            let e = [a[0] + tj * (b[0] - a[0]), a[1] + tj * (b[1] - a[1])];
            pts.push([si * e[0], si * e[1]]);
            wts.push(ws[i] * wt[j] * si * det);
        }
    }
    (pts, wts)
}

/// Fan rule over a convex polygon that contains the origin, one collapsed
/// triangle per edge.
pub fn polygon_rule(vertices: &[[f64; 2]], n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for k in 0..vertices.len() {
        let a = vertices[k];
        let b = vertices[(k + 1) % vertices.len()];
        let (p, w) = fan_triangle(n, a, b);
        pts.extend(p);
        wts.extend(w);
    }
    (pts, wts)
}
