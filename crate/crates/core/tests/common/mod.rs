//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

/// Cost `P(0) x0^2 / 2` of the finite-horizon scalar regulator with `L = (r1 x^2 + r2 u^2) / 2`,
/// from `P' = -2 a P - r1 + P^2 b^2 / r2`, `P(tf) = 0`, integrated backwards with RK4.
pub fn riccati_cost(a: f64, b: f64, r1: f64, r2: f64, x0: f64, tf: f64) -> f64 {
    let steps = 200_000;
    let h = tf / steps as f64;
    let rate = |p: f64| -(-2.0 * a * p - r1 + p * p * b * b / r2);
    let mut p = 0.0;
    for _ in 0..steps {
        let k1 = rate(p);
        let k2 = rate(p + 0.5 * h * k1);
        let k3 = rate(p + 0.5 * h * k2);
        let k4 = rate(p + h * k3);
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    0.5 * p * x0 * x0
}

/// Zermelo navigation through `x1' = cos u + p x2`, `x2' = sin u` on `[0, 1]` with a heading law
/// `u(t) = atan(-(p t + k))`; returns `(x1(1), x2(1), max x2)`.
fn zermelo_heading_run(p: f64, k: f64, steps: usize) -> (f64, f64, f64) {
    let h = 1.0 / steps as f64;
    let rate = |t: f64, x: [f64; 2]| {
        let u = (-(p * t + k)).atan();
        [u.cos() + p * x[1], u.sin()]
    };
    let mut x = [0.0, 0.0];
    let mut peak = 0.0f64;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rate(t, x);
        let k2 = rate(t + 0.5 * h, [x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = rate(t + 0.5 * h, [x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = rate(t + h, [x[0] + h * k3[0], x[1] + h * k3[1]]);
        for j in 0..2 {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        peak = peak.max(x[1]);
    }
    (x[0], x[1], peak)
}

/// Optimal Zermelo cost `-x1(1)` by indirect shooting: the minimum principle gives a
/// constant `lambda_1 = -1`, `lambda_2 = p t + k` and `tan u = -lambda_2`; `k` is found by
/// bisection on `x2(1) = 0`.
pub fn zermelo_optimal_cost(p: f64) -> f64 {
    let steps = 20_000;
    let (mut lo, mut hi) = (-50.0, 50.0);
    // x2(1) decreases in k
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if zermelo_heading_run(p, mid, steps).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    -zermelo_heading_run(p, 0.5 * (lo + hi), steps).0
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
