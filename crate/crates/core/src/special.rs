//! Special functions and quadrature rules used across the crate.

use std::f64::consts::PI;

pub use statrs::function::gamma::gamma;
use statrs::function::gamma::gamma_ui;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Exponential integral `E1(z)` for `z > 0`.
pub fn exp_integral_e1(z: f64) -> f64 {
    assert!(z > 0.0, "E1 requires z > 0");
    if z <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -z / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - z.ln() + sum
    } else {
        upper_gamma_cf(0.0, z)
    }
}

/// Upper incomplete gamma by modified Lentz continued fraction; accurate for `z >= 1`
/// and any real `a`.
fn upper_gamma_cf(a: f64, z: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (a * z.ln() - z).exp() * h
}

/// Upper incomplete gamma function `Γ(a, z)` for real `a` (not a non-positive integer
/// when `z < 1`) and `z > 0`.
pub fn upper_gamma(a: f64, z: f64) -> f64 {
    assert!(z > 0.0);
    if z >= 1.0 {
        return upper_gamma_cf(a, z);
    }
    if a > 0.0 {
        gamma_ui(a, z)
    } else {
        // Γ(a, z) = (Γ(a + 1, z) - z^a e^{-z}) / a
        (upper_gamma(a + 1.0, z) - (a * z.ln() - z).exp()) / a
    }
}

/// Tanh-sinh nodes on `(0, ∞)` via `x = exp(π/2 sinh t)`; handles algebraic endpoint
/// behaviour at the origin and exponential decay at infinity.
pub fn half_line_nodes(step: f64, t_max: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let k_max = (t_max / step).ceil() as i64;
    for k in -k_max..=k_max {
        let t = k as f64 * step;
        let arg = 0.5 * PI * t.sinh();
        let x = arg.exp();
        let w = step * x * 0.5 * PI * t.cosh();
        if x.is_finite() && w.is_finite() && w > 0.0 {
            out.push((x, w));
        }
    }
    out
}

/// Sinh-sinh nodes on the whole real line via `x = sinh(π/2 sinh t)`.
pub fn real_line_nodes(step: f64, t_max: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let k_max = (t_max / step).ceil() as i64;
    for k in -k_max..=k_max {
        let t = k as f64 * step;
        let arg = 0.5 * PI * t.sinh();
        let x = arg.sinh();
        let w = step * arg.cosh() * 0.5 * PI * t.cosh();
        if x.is_finite() && w.is_finite() {
            out.push((x, w));
        }
    }
    out
}
