//! Coulomb kernels, truncations, smeared charges and cell-averaged kernel integrals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::special::{gamma, gauss_legendre_on};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `-log r`
    Logarithmic,
    /// `r^{2-d}`
    Power,
}

/// Coulomb kernel in dimension `dim`.
///
/// For `dim == 1` the logarithmic kernel is the restriction of the planar one; the
/// `embedded` flag records that field energies live in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub family: KernelFamily,
    pub c_d: f64,
    pub embedded: bool,
}

/// Surface area of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

impl KernelSpec {
    pub fn new(dim: usize) -> Result<Self> {
        match dim {
            0 => Err(LabError::Domain("dimension must be at least 1".into())),
            1 => Ok(Self { dim, family: KernelFamily::Logarithmic, c_d: PI, embedded: true }),
            2 => Ok(Self { dim, family: KernelFamily::Logarithmic, c_d: 2.0 * PI, embedded: false }),
            _ => Ok(Self {
                dim,
                family: KernelFamily::Power,
                c_d: (dim as f64 - 2.0) * unit_sphere_area(dim),
                embedded: false,
            }),
        }
    }

    /// Dimension in which the field `-Δh = c μ` is posed.
    pub fn ambient_dim(&self) -> usize {
        if self.embedded {
            2
        } else {
            self.dim
        }
    }

    /// Constant of the ambient Laplacian: `c_2` for the embedded line, `c_d` otherwise.
    pub fn field_constant(&self) -> f64 {
        if self.embedded {
            2.0 * PI
        } else {
            self.c_d
        }
    }

    /// Kernel value without argument checks; `r > 0` is the caller's job.
    #[inline]
    pub fn g(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Logarithmic => -r.ln(),
            KernelFamily::Power => {
                if self.dim == 3 {
                    1.0 / r
                } else {
                    r.powi(2 - self.dim as i32)
                }
            }
        }
    }

    /// `g(λ r)` expressed through `g(r)`.
    #[inline]
    pub fn g_dilated(&self, g_r: f64, lambda: f64) -> f64 {
        match self.family {
            KernelFamily::Logarithmic => g_r - lambda.ln(),
            KernelFamily::Power => g_r * lambda.powi(2 - self.dim as i32),
        }
    }
}

pub fn kernel_value(r: f64, spec: &KernelSpec) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(LabError::Domain(format!("negative distance {r}")));
    }
    if r == 0.0 {
        return Err(LabError::Singularity("kernel evaluated at r = 0".into()));
    }
    Ok(spec.g(r))
}

/// `f_η(r) = max(g(r) - g(η), 0)`. At `r = 0` returns `+∞` for power kernels.
pub fn truncated_kernel(r: f64, eta: f64, spec: &KernelSpec) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(LabError::Domain(format!("truncation radius must be positive, got {eta}")));
    }
    if r.is_nan() || r < 0.0 {
        return Err(LabError::Domain(format!("negative distance {r}")));
    }
    if r >= eta {
        return Ok(0.0);
    }
    if r == 0.0 {
        return match spec.family {
            KernelFamily::Power => Ok(f64::INFINITY),
            KernelFamily::Logarithmic => {
                Err(LabError::Singularity("log truncation evaluated at r = 0".into()))
            }
        };
    }
    Ok(spec.g(r) - spec.g(eta))
}

/// Uniform measure of total mass `mass` on the sphere of radius `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearedCharge {
    pub center: Vec<f64>,
    pub radius: f64,
    pub mass: f64,
}

impl SmearedCharge {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(LabError::Domain(format!("smearing radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius, mass: 1.0 })
    }

    /// Potential `mass · g(max(|x - center|, η))` generated at `x`.
    pub fn potential_at(&self, x: &[f64], spec: &KernelSpec) -> f64 {
        let r = distance(x, &self.center);
        self.mass * spec.g(r.max(self.radius))
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

const OVERLAP_ORDER: usize = 64;

/// Interaction of two unit smeared charges whose centers are `s` apart.
pub fn smeared_interaction_at_distance(s: f64, eta: f64, spec: &KernelSpec) -> f64 {
    if s >= 2.0 * eta {
        return spec.g(s);
    }
    if s == 0.0 {
        return spec.g(eta);
    }
    // Newton: the second charge generates g(max(|x - q|, η)); average it over the
    // first sphere. Only the polar angle θ about the axis matters, with weight
    // sin^{m-2} θ in ambient dimension m. For cos θ > s/(2η) the point is inside the
    // second sphere and the potential is the constant g(η).
    let m = spec.ambient_dim();
    let theta_star = (s / (2.0 * eta)).acos();
    let weight = |t: f64| if m == 2 { 1.0 } else { t.sin().powi(m as i32 - 2) };
    let mut inner_w = 0.0;
    for (t, w) in gauss_legendre_on(OVERLAP_ORDER, 0.0, theta_star) {
        inner_w += w * weight(t);
    }
    let mut outer_w = 0.0;
    let mut outer = 0.0;
    for (t, w) in gauss_legendre_on(OVERLAP_ORDER, theta_star, PI) {
        let wt = w * weight(t);
        let r2 = eta * eta + s * s - 2.0 * eta * s * t.cos();
        outer_w += wt;
        outer += wt * spec.g(r2.sqrt().max(eta));
    }
    (inner_w * spec.g(eta) + outer) / (inner_w + outer_w)
}

/// Exact interaction energy of the unit sphere charges of radius `eta` about `p` and `q`.
pub fn smeared_pair_interaction(p: &[f64], q: &[f64], eta: f64, spec: &KernelSpec) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(LabError::Domain(format!("smearing radius must be positive, got {eta}")));
    }
    if p.len() != spec.dim || q.len() != spec.dim {
        return Err(LabError::Domain("point dimension does not match the kernel".into()));
    }
    Ok(smeared_interaction_at_distance(distance(p, q), eta, spec))
}

/// `∫ log|t| dt` antiderivative.
#[inline]
fn xlogx_minus_x(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.abs().ln() - t
    }
}

/// `∬ log sqrt(u² + v²) du dv` antiderivative.
#[inline]
fn log_rect_antiderivative(u: f64, v: f64) -> f64 {
    let r2 = u * u + v * v;
    if r2 == 0.0 {
        return 0.0;
    }
    let mut f = 0.5 * u * v * r2.ln() - 1.5 * u * v;
    if u != 0.0 {
        f += 0.5 * u * u * (v / u).atan();
    }
    if v != 0.0 {
        f += 0.5 * v * v * (u / v).atan();
    }
    f
}

/// `ln(a + sqrt(a² + b²))` without cancellation for negative `a`.
#[inline]
fn log_a_plus_r(a: f64, b2: f64, r: f64) -> f64 {
    if a >= 0.0 {
        (a + r).ln()
    } else {
        (b2 / (r - a)).ln()
    }
}

/// `∭ 1/r du dv dw` antiderivative.
fn inv_r_box_antiderivative(u: f64, v: f64, w: f64) -> f64 {
    let r = (u * u + v * v + w * w).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    let mut f = 0.0;
    if v * w != 0.0 {
        f += v * w * log_a_plus_r(u, v * v + w * w, r);
    }
    if u * w != 0.0 {
        f += u * w * log_a_plus_r(v, u * u + w * w, r);
    }
    if u * v != 0.0 {
        f += u * v * log_a_plus_r(w, u * u + v * v, r);
    }
    if u != 0.0 {
        f -= 0.5 * u * u * (v * w / (u * r)).atan();
    }
    if v != 0.0 {
        f -= 0.5 * v * v * (u * w / (v * r)).atan();
    }
    if w != 0.0 {
        f -= 0.5 * w * w * (u * v / (w * r)).atan();
    }
    f
}

/// Average of `g(x - y)` over `y` in the axis-aligned box `[lo, hi]`.
pub fn point_box_average(x: &[f64], lo: &[f64], hi: &[f64], spec: &KernelSpec) -> Result<f64> {
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    match spec.dim {
        1 => {
            let (a, b) = (lo[0] - x[0], hi[0] - x[0]);
            Ok(-(xlogx_minus_x(b) - xlogx_minus_x(a)) / vol)
        }
        2 => {
            let (u0, u1) = (lo[0] - x[0], hi[0] - x[0]);
            let (v0, v1) = (lo[1] - x[1], hi[1] - x[1]);
            let s = log_rect_antiderivative(u1, v1) - log_rect_antiderivative(u0, v1)
                - log_rect_antiderivative(u1, v0)
                + log_rect_antiderivative(u0, v0);
            Ok(-s / vol)
        }
        3 => {
            let u = [lo[0] - x[0], hi[0] - x[0]];
            let v = [lo[1] - x[1], hi[1] - x[1]];
            let w = [lo[2] - x[2], hi[2] - x[2]];
            let mut s = 0.0;
            for (i, &ui) in u.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    for (k, &wk) in w.iter().enumerate() {
                        let sign = if (i + j + k) % 2 == 1 { 1.0 } else { -1.0 };
                        s += sign * inv_r_box_antiderivative(ui, vj, wk);
                    }
                }
            }
            Ok(s / vol)
        }
        d => Err(LabError::Capability(format!("box averages of the kernel in dimension {d}"))),
    }
}

/// `-∬ log|x - y|` averaged over the unit square.
pub const SQUARE_LOG_CONSTANT: f64 = 25.0 / 12.0 - PI / 3.0 - std::f64::consts::LN_2 / 3.0;

/// `∬ 1/|x - y|` averaged over the unit cube.
pub fn cube_inverse_distance_constant() -> f64 {
    let s2 = 2f64.sqrt();
    let s3 = 3f64.sqrt();
    0.4 * (1.0 + s2 - 2.0 * s3) - 2.0 * PI / 3.0
        + 2.0 * (1.0 + s2).ln()
        + 4.0 * ((1.0 + s3) / s2).ln()
}

/// Mean of `g(x - y)` for `x, y` uniform in one cubic cell of side `h`.
pub fn cell_self_average(h: f64, spec: &KernelSpec) -> Result<f64> {
    match spec.dim {
        1 => Ok(-h.ln() + 1.5),
        2 => Ok(-h.ln() + SQUARE_LOG_CONSTANT),
        3 => Ok(cube_inverse_distance_constant() / h),
        d => Err(LabError::Capability(format!("cell self-energy in dimension {d}"))),
    }
}

/// Mean of `g(x - y)` for `x` in the cell at the origin and `y` in the cell shifted by
/// `offset` grid steps. Inner integral exact, outer by Gauss–Legendre of order `order`.
pub fn cell_pair_average(offset: &[i64], h: f64, spec: &KernelSpec, order: usize) -> Result<f64> {
    let d = spec.dim;
    if offset.len() != d {
        return Err(LabError::Domain("offset dimension does not match the kernel".into()));
    }
    if offset.iter().all(|&o| o == 0) {
        return cell_self_average(h, spec);
    }
    let rule = gauss_legendre_on(order, 0.0, h);
    let lo: Vec<f64> = offset.iter().map(|&o| o as f64 * h).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + h).collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..d {
            x[k] = rule[idx[k]].0;
            w *= rule[idx[k]].1;
        }
        total += w * point_box_average(&x, &lo, &hi, spec)?;
        let mut k = 0;
        loop {
            if k == d {
                return Ok(total / h.powi(d as i32));
            }
            idx[k] += 1;
            if idx[k] < order {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
