//! Coulomb gas energies: the Hamiltonian, the smeared-charge next-order energy, the
//! splitting identity and discrepancies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumSolution;
use crate::error::{LabError, Result};
use crate::kernels::{distance, point_box_average, smeared_interaction_at_distance, KernelFamily, KernelSpec};
use crate::potential::PotentialSpec;
use crate::special::gauss_legendre_on;

/// `n` points in `R^d`. `blown_up` records that coordinates were multiplied by `n^{1/d}`
/// (by `n` when `d = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfiguration {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub blown_up: bool,
}

/// Dilation factor of the blow-up: `n^{1/d}`, and `n` on the line.
pub fn blow_up_scale(n: usize, dim: usize) -> f64 {
    if dim == 1 {
        n as f64
    } else {
        (n as f64).powf(1.0 / dim as f64)
    }
}

impl PointConfiguration {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.iter().any(|p| p.len() != dim) {
            return Err(LabError::Domain(format!("every point must have {dim} coordinates")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("points must be finite".into()));
        }
        Ok(Self { dim, points, blown_up: false })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Smallest pairwise distance (`+∞` for fewer than two points).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                best = best.min(distance(&self.points[i], &self.points[j]));
            }
        }
        best
    }

    pub fn is_distinct(&self) -> bool {
        self.min_separation() > 0.0
    }

    pub fn blow_up(&self) -> Self {
        if self.blown_up {
            return self.clone();
        }
        let s = blow_up_scale(self.n(), self.dim);
        Self {
            dim: self.dim,
            points: self.points.iter().map(|p| p.iter().map(|v| v * s).collect()).collect(),
            blown_up: true,
        }
    }

    pub fn blow_down(&self) -> Self {
        if !self.blown_up {
            return self.clone();
        }
        let s = blow_up_scale(self.n(), self.dim);
        Self {
            dim: self.dim,
            points: self.points.iter().map(|p| p.iter().map(|v| v / s).collect()).collect(),
            blown_up: false,
        }
    }
}

/// Pairwise (tree) summation; the grouping depends only on the length.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

/// `Σ_{i<j} f(i, j)`, rows evaluated in parallel, reduced in a fixed order.
fn pair_sum(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (i + 1..n).map(|j| f(i, j)).collect();
            tree_sum(&row)
        })
        .collect();
    tree_sum(&rows)
}

fn check_distinct(config: &PointConfiguration) -> Result<()> {
    for i in 0..config.n() {
        for j in i + 1..config.n() {
            if config.points[i] == config.points[j] {
                return Err(LabError::CoincidentPoints { i, j });
            }
        }
    }
    Ok(())
}

/// `H_n = Σ_{i≠j} g(x_i - x_j) + n Σ_i V(x_i)`.
pub fn hamiltonian(config: &PointConfiguration, spec: &PotentialSpec) -> Result<f64> {
    if config.dim != spec.dim {
        return Err(LabError::Domain("configuration and potential dimensions differ".into()));
    }
    check_distinct(config)?;
    let kernel = KernelSpec::new(config.dim)?;
    let n = config.n();
    let pts = &config.points;
    let pairs = pair_sum(n, |i, j| kernel.g(distance(&pts[i], &pts[j])));
    let confinement: Vec<f64> = pts.iter().map(|x| spec.value(x)).collect();
    Ok(2.0 * pairs + n as f64 * tree_sum(&confinement))
}

/// Gradient of `H_n` with respect to every coordinate.
pub fn hamiltonian_gradient(config: &PointConfiguration, spec: &PotentialSpec) -> Vec<Vec<f64>> {
    let n = config.n();
    let d = config.dim;
    let pts = &config.points;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut grad: Vec<f64> = spec.gradient(&pts[i]).iter().map(|v| n as f64 * v).collect();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r2: f64 = (0..d).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                // ∇g(x) = -x / |x|^d for both kernel families up to the factor (d-2) in d ≥ 3
                let factor = if d <= 2 { 1.0 / r2 } else { (d as f64 - 2.0) / r2.powf(d as f64 / 2.0) };
                for k in 0..d {
                    grad[k] -= 2.0 * factor * (pts[i][k] - pts[j][k]);
                }
            }
            grad
        })
        .collect()
}

/// Exact potential `∫ g(x - y) dμ₀(y)` of the piecewise-constant equilibrium density.
///
/// Cells within a few spacings use closed-form box averages; farther cells use the
/// midpoint value, which for harmonic kernels is fourth-order accurate.
#[derive(Debug, Clone)]
pub struct PointPotential<'a> {
    eq: &'a EquilibriumSolution,
    cells: Vec<(Vec<f64>, f64)>,
    near: f64,
}

impl<'a> PointPotential<'a> {
    pub fn new(eq: &'a EquilibriumSolution) -> Self {
        let g = eq.grid();
        let vol = g.cell_volume();
        let cells = eq
            .density
            .values
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(f, &m)| (g.point(f), m * vol))
            .collect();
        let near = if g.dim() == 1 { f64::INFINITY } else { 4.5 * g.spacing };
        Self { eq, cells, near }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let kernel = &self.eq.kernel;
        let h = self.eq.grid().spacing;
        let mut terms = Vec::with_capacity(self.cells.len());
        for (c, m) in &self.cells {
            let close = c.iter().zip(x).all(|(a, b)| (a - b).abs() <= self.near);
            let v = if close {
                let lo: Vec<f64> = c.iter().map(|v| v - 0.5 * h).collect();
                let hi: Vec<f64> = c.iter().map(|v| v + 0.5 * h).collect();
                point_box_average(x, &lo, &hi, kernel).unwrap_or(f64::NAN)
            } else {
                kernel.g(distance(c, x))
            };
            terms.push(m * v);
        }
        tree_sum(&terms)
    }

    /// `ζ(x) = h(x) + V(x)/2 - c` with the point potential.
    pub fn zeta(&self, x: &[f64]) -> f64 {
        self.value(x) + 0.5 * self.eq.potential.value(x) - self.eq.c
    }

    /// `∫_{B(x, r)} (g(r) - g(|x - y|)) dμ₀(y)` by polar Gauss–Legendre quadrature over the
    /// piecewise-constant density (line measure for d = 1).
    pub fn ball_correction(&self, x: &[f64], r: f64) -> f64 {
        let kernel = &self.eq.kernel;
        let gr = kernel.g(r);
        let radial = gauss_legendre_on(24, 0.0, r);
        let density = |y: &[f64]| self.eq.density.value_at_cell(y);
        match kernel.dim {
            1 => {
                let mut s = 0.0;
                for (t, w) in &radial {
                    let dg = gr - kernel.g(*t);
                    s += w * dg * (density(&[x[0] + t]) + density(&[x[0] - t]));
                }
                s
            }
            2 => {
                let m = 64;
                let mut s = 0.0;
                for (t, w) in &radial {
                    let dg = gr - kernel.g(*t);
                    let mut ring = 0.0;
                    for a in 0..m {
                        let th = 2.0 * std::f64::consts::PI * (a as f64 + 0.5) / m as f64;
                        ring += density(&[x[0] + t * th.cos(), x[1] + t * th.sin()]);
                    }
                    s += w * dg * t * ring * 2.0 * std::f64::consts::PI / m as f64;
                }
                s
            }
            _ => {
                let polar = gauss_legendre_on(16, -1.0, 1.0);
                let m = 32;
                let mut s = 0.0;
                for (t, w) in &radial {
                    let dg = gr - kernel.g(*t);
                    let mut shell = 0.0;
                    for (z, wz) in &polar {
                        let rho = (1.0 - z * z).sqrt();
                        for a in 0..m {
                            let th = 2.0 * std::f64::consts::PI * (a as f64 + 0.5) / m as f64;
                            let y = [x[0] + t * rho * th.cos(), x[1] + t * rho * th.sin(), x[2] + t * z];
                            shell += wz * density(&y);
                        }
                    }
                    s += w * dg * t * t * shell * 2.0 * std::f64::consts::PI / m as f64;
                }
                s
            }
        }
    }
}

impl crate::grid::GridField {
    /// Value of the cell containing `x` (zero outside the grid).
    pub fn value_at_cell(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let mut idx = Vec::with_capacity(g.dim());
        for k in 0..g.dim() {
            let t = ((x[k] - g.lower[k]) / g.spacing).floor();
            if t < 0.0 || t >= g.shape[k] as f64 {
                return 0.0;
            }
            idx.push(t as usize);
        }
        self.values[g.flat(&idx)]
    }
}

/// `∬ g dμ₀ dμ₀` of the discrete solution.
pub fn self_interaction(eq: &EquilibriumSolution) -> f64 {
    let g = eq.grid();
    let vol = g.cell_volume();
    let potential_part: f64 = eq
        .density
        .rows()
        .map(|(x, m)| m * vol * eq.potential.value(&x))
        .sum();
    eq.energy - potential_part
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEnergy {
    pub value: f64,
    /// Some pair is closer than `2η`, so smeared pairs overlap.
    pub overlap: bool,
}

fn field_constant(kernel: &KernelSpec) -> f64 {
    kernel.field_constant()
}

/// `∫|∇h'_{n,η}|² - n c g(η)` for a blown-up configuration, by Newton's theorem:
/// `c [Σ_{i≠j} J_η - 2 Σ_i ∫ g_η(x'_i - y) dμ₀' + ∬ g dμ₀' dμ₀']`. With `eta = None`
/// the `η → 0` limit is returned.
pub fn truncated_field_energy(
    config: &PointConfiguration,
    eq: &EquilibriumSolution,
    eta: Option<f64>,
) -> Result<TruncatedEnergy> {
    if !config.blown_up {
        return Err(LabError::Domain("truncated_field_energy expects a blown-up configuration".into()));
    }
    if let Some(e) = eta {
        if !(e > 0.0) {
            return Err(LabError::Domain(format!("η must be positive, got {e}")));
        }
    }
    check_distinct(config)?;
    let kernel = eq.kernel;
    let n = config.n();
    let s = blow_up_scale(n, config.dim);
    let pts = &config.points;
    let overlap = eta.is_some_and(|e| config.min_separation() < 2.0 * e);
    let pairs = 2.0
        * pair_sum(n, |i, j| {
            let r = distance(&pts[i], &pts[j]);
            match eta {
                Some(e) => smeared_interaction_at_distance(r, e, &kernel),
                None => kernel.g(r),
            }
        });
    let pot = PointPotential::new(eq);
    let nf = n as f64;
    let cross: Vec<f64> = pts
        .par_iter()
        .map(|xp| {
            let x: Vec<f64> = xp.iter().map(|v| v / s).collect();
            let mut u = nf * kernel.g_dilated(pot.value(&x), s);
            if let Some(e) = eta {
                let corr = pot.ball_correction(&x, e / s);
                u += nf * match kernel.family {
                    KernelFamily::Logarithmic => corr,
                    KernelFamily::Power => corr * s.powi(2 - kernel.dim as i32),
                };
            }
            u
        })
        .collect();
    let mumu = nf * nf * kernel.g_dilated(self_interaction(eq), s);
    let value = field_constant(&kernel) * (pairs - 2.0 * tree_sum(&cross) + mumu);
    Ok(TruncatedEnergy { value, overlap })
}

/// Terms of the splitting `H_n = n²I + 2nΣζ + log term + scale · 𝓗_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextOrderReport {
    pub n: usize,
    pub dim: usize,
    pub hamiltonian: f64,
    /// `n² I(μ₀)`
    pub leading: f64,
    /// `-(n/2) log n` (d = 2), `-n log n` (d = 1), else 0
    pub log_term: f64,
    /// `2n Σ ζ(x_i)`
    pub confinement: f64,
    /// `𝓗_n` at the reported `η`
    pub next_order: f64,
    /// `𝓗_n` in the limit `η → 0`
    pub next_order_limit: f64,
    /// Coefficient of `𝓗_n` in the splitting.
    pub scale: f64,
    pub eta: f64,
    pub overlap: bool,
    pub residual: f64,
    pub quadrature_tolerance: f64,
    /// `scale · 𝓗_n / n`
    pub next_order_per_point: f64,
}

/// `η = 0.1 ×` the smallest blown-up separation (0.1 for a single point).
pub fn default_eta(config: &PointConfiguration) -> f64 {
    let blown = config.blow_up();
    let sep = blown.min_separation();
    if sep.is_finite() {
        0.1 * sep
    } else {
        0.1
    }
}

/// Evaluates every term of the splitting identity for an un-blown configuration.
///
/// `ζ(x_i)` comes from interpolating the equilibrium grid; `𝓗_n` from the Newton
/// reduction with exact near-field cell integrals. The residual is therefore the
/// mismatch between two independent quadratures of the same potential.
pub fn splitting_report(
    config: &PointConfiguration,
    eq: &EquilibriumSolution,
    eta: Option<f64>,
) -> Result<NextOrderReport> {
    if config.blown_up {
        return Err(LabError::Domain("splitting_report expects original coordinates".into()));
    }
    if config.dim != eq.kernel.dim {
        return Err(LabError::Domain("configuration and equilibrium dimensions differ".into()));
    }
    let n = config.n();
    let nf = n as f64;
    let d = config.dim;
    let eta = eta.unwrap_or_else(|| default_eta(config));
    let h_n = hamiltonian(config, &eq.potential)?;
    let leading = nf * nf * eq.energy;
    let zetas: Vec<f64> = config.points.iter().map(|x| eq.zeta_at(x)).collect();
    let confinement = 2.0 * nf * tree_sum(&zetas);
    let log_term = match d {
        1 => -nf * nf.ln(),
        2 => -0.5 * nf * nf.ln(),
        _ => 0.0,
    };
    let blown = config.blow_up();
    let trunc = truncated_field_energy(&blown, eq, Some(eta))?;
    let limit = truncated_field_energy(&blown, eq, None)?;
    let kernel = eq.kernel;
    let scale = match d {
        1 | 2 => 1.0 / field_constant(&kernel),
        _ => nf.powf(1.0 - 2.0 / d as f64) / kernel.c_d,
    };
    let residual = h_n - (leading + confinement + log_term + scale * limit.value);
    let h = eq.grid().spacing;
    let max_density = eq.density.max();
    let quadrature_tolerance = nf * nf * h * h * kernel.c_d * max_density;
    Ok(NextOrderReport {
        n,
        dim: d,
        hamiltonian: h_n,
        leading,
        log_term,
        confinement,
        next_order: trunc.value,
        next_order_limit: limit.value,
        scale,
        eta,
        overlap: trunc.overlap,
        residual,
        quadrature_tolerance,
        next_order_per_point: scale * limit.value / nf,
    })
}

/// `D(x', R) = #{points in B(x', R)} - μ₀'(B(x', R))` for a blown-up configuration.
pub fn discrepancy(
    config: &PointConfiguration,
    center: &[f64],
    radius: f64,
    eq: &EquilibriumSolution,
) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(LabError::Domain("discrepancy radius must be positive".into()));
    }
    if !config.blown_up {
        return Err(LabError::Domain("discrepancy expects a blown-up configuration".into()));
    }
    let count = config.points.iter().filter(|p| distance(p, center) < radius).count() as f64;
    let n = config.n().max(1);
    let s = blow_up_scale(n, config.dim);
    let c: Vec<f64> = center.iter().map(|v| v / s).collect();
    let mass = n as f64 * ball_mass(eq, &c, radius / s);
    Ok(count - mass)
}

/// `μ₀(B(c, r))` with cells cut by the sphere resolved by 8^d sub-samples.
pub fn ball_mass(eq: &EquilibriumSolution, center: &[f64], r: f64) -> f64 {
    let g = eq.grid();
    let h = g.spacing;
    let d = g.dim();
    let vol = g.cell_volume();
    let half_diag = 0.5 * h * (d as f64).sqrt();
    let sub = 8usize;
    let mut total = 0.0;
    for (f, &m) in eq.density.values.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let x = g.point(f);
        let dist = distance(&x, center);
        if dist + half_diag <= r {
            total += m * vol;
        } else if dist - half_diag < r {
            let mut inside = 0usize;
            let count = sub.pow(d as u32);
            for k in 0..count {
                let mut rem = k;
                let mut r2 = 0.0;
                for xk in x.iter().zip(center) {
                    let t = (rem % sub) as f64;
                    rem /= sub;
                    let y = xk.0 - 0.5 * h + (t + 0.5) * h / sub as f64;
                    r2 += (y - xk.1).powi(2);
                }
                if r2 < r * r {
                    inside += 1;
                }
            }
            total += m * vol * inside as f64 / count as f64;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCheck {
    /// Whether the bound holds with `C = 50`.
    pub holds: bool,
    /// Smallest `C ≥ 0` for which the bound holds on this configuration.
    pub fitted_constant: f64,
    /// `H_n - (n²I + 2nΣζ + log term)`
    pub margin: f64,
}

/// `H_n ≥ n²I(μ₀) + 2nΣζ(x_i) - (n/2) log n·1_{d=2} - C ‖μ₀‖_∞ n^{2-2/d}`.
pub fn easy_lower_bound_check(config: &PointConfiguration, eq: &EquilibriumSolution) -> Result<LowerBoundCheck> {
    let n = config.n() as f64;
    let d = config.dim;
    let h_n = match hamiltonian(config, &eq.potential) {
        Ok(v) => v,
        Err(LabError::CoincidentPoints { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let zetas: Vec<f64> = config.points.iter().map(|x| eq.zeta_at(x)).collect();
    let log_term = match d {
        1 => -n * n.ln(),
        2 => -0.5 * n * n.ln(),
        _ => 0.0,
    };
    let base = n * n * eq.energy + 2.0 * n * tree_sum(&zetas) + log_term;
    let margin = h_n - base;
    let unit = eq.density.max() * n.powf(2.0 - 2.0 / d as f64);
    let fitted_constant = if margin >= 0.0 { 0.0 } else { -margin / unit };
    Ok(LowerBoundCheck { holds: margin + 50.0 * unit >= 0.0, fitted_constant, margin })
}

/// Gradient descent with Barzilai–Borwein steps and backtracking on `H_n`.
pub fn minimize_hamiltonian(
    start: &PointConfiguration,
    spec: &PotentialSpec,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(PointConfiguration, f64)> {
    let mut x = start.clone();
    let mut e = hamiltonian(&x, spec)?;
    let mut grad = hamiltonian_gradient(&x, spec);
    let mut step = 1e-3 / (x.n() as f64);
    let flat = |g: &Vec<Vec<f64>>| g.iter().flatten().copied().collect::<Vec<f64>>();
    for _ in 0..max_iterations {
        let gmax = grad.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax <= tolerance {
            return Ok((x, e));
        }
        let mut trial_step = step;
        let (next, next_e) = loop {
            let mut y = x.clone();
            for (p, g) in y.points.iter_mut().zip(&grad) {
                for (pk, gk) in p.iter_mut().zip(g) {
                    *pk -= trial_step * gk;
                }
            }
            match hamiltonian(&y, spec) {
                Ok(v) if v.is_finite() && v <= e - 1e-4 * trial_step * flat(&grad).iter().map(|g| g * g).sum::<f64>() => {
                    break (y, v)
                }
                _ => {
                    trial_step *= 0.5;
                    if trial_step < 1e-300 {
                        return Ok((x, e));
                    }
                }
            }
        };
        let next_grad = hamiltonian_gradient(&next, spec);
        let sx: Vec<f64> = flat(&next.points).iter().zip(flat(&x.points)).map(|(a, b)| a - b).collect();
        let sg: Vec<f64> = flat(&next_grad).iter().zip(flat(&grad)).map(|(a, b)| a - b).collect();
        let ss: f64 = sx.iter().map(|v| v * v).sum();
        let sy: f64 = sx.iter().zip(&sg).map(|(a, b)| a * b).sum();
        step = if sy > 0.0 { (ss / sy).min(1e3) } else { 2.0 * trial_step };
        x = next;
        e = next_e;
        grad = next_grad;
    }
    let gmax = grad.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    Err(LabError::NoConvergence { method: "gradient descent on H_n", iterations: max_iterations, residual: gmax })
}

/// Grid quadrature of `∫_Ω |∇h'_{n,η}|²` for a blown-up planar configuration, with
/// `Ω` either a square of side `side` about the origin or the disk `B(center, radius)`.
/// Point-charge gradients are analytic; `∇` of the background potential uses the
/// closed-form gradient supplied by the caller. Returns the integral and, for the
/// square, an error bar for the dipole tail `π |p|² / (side/2)²` outside it.
pub fn field_energy_grid(
    config: &PointConfiguration,
    eta: f64,
    background_gradient: &(dyn Fn(&[f64]) -> [f64; 2] + Sync),
    region: GridRegion,
    spacing: f64,
) -> Result<(f64, f64)> {
    if config.dim != 2 || !config.blown_up {
        return Err(LabError::Capability("the grid field energy is planar and blown-up".into()));
    }
    let (cx, cy, half, disk) = match region {
        GridRegion::Square { side } => (0.0, 0.0, 0.5 * side, None),
        GridRegion::Disk { center, radius } => (center[0], center[1], radius, Some(radius)),
    };
    let m = (2.0 * half / spacing).ceil() as usize;
    let h = 2.0 * half / m as f64;
    let pts = &config.points;
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let x = cx - half + (i as f64 + 0.5) * h;
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                let y = cy - half + (j as f64 + 0.5) * h;
                if let Some(r) = disk {
                    if (x - cx).powi(2) + (y - cy).powi(2) > r * r {
                        continue;
                    }
                }
                let b = background_gradient(&[x, y]);
                let (mut gx, mut gy) = (-b[0], -b[1]);
                for p in pts {
                    let dx = x - p[0];
                    let dy = y - p[1];
                    let r2 = dx * dx + dy * dy;
                    if r2 > eta * eta {
                        gx -= dx / r2;
                        gy -= dy / r2;
                    }
                }
                row.push(gx * gx + gy * gy);
            }
            tree_sum(&row)
        })
        .collect();
    let integral = tree_sum(&rows) * h * h;
    let tail = match region {
        GridRegion::Square { .. } => {
            let mut dipole = [0.0, 0.0];
            for p in pts {
                dipole[0] += p[0];
                dipole[1] += p[1];
            }
            std::f64::consts::PI * (dipole[0].powi(2) + dipole[1].powi(2)) / (half * half)
        }
        GridRegion::Disk { .. } => 0.0,
    };
    Ok((integral, tail))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridRegion {
    Square { side: f64 },
    Disk { center: [f64; 2], radius: f64 },
}

/// Blown-up gradient of the circle-law background potential `∫ g(x' - y) dμ₀'(y)`.
pub fn circle_law_background_gradient(n: usize) -> impl Fn(&[f64]) -> [f64; 2] {
    let nf = n as f64;
    move |x: &[f64]| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 <= nf {
            [-x[0], -x[1]]
        } else {
            [-nf * x[0] / r2, -nf * x[1] / r2]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium_direct, EquilibriumConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn circle_law() -> &'static EquilibriumSolution {
        static SOL: OnceLock<EquilibriumSolution> = OnceLock::new();
        SOL.get_or_init(|| {
            let cfg = EquilibriumConfig::on_box(vec![-2.0; 2], vec![2.0; 2], 1.0 / 32.0);
            solve_equilibrium_direct(&PotentialSpec::quadratic(2), &cfg).unwrap()
        })
    }

    fn random_disk(n: usize, seed: u64) -> PointConfiguration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let r = rng.random::<f64>().sqrt();
                let a = 2.0 * PI * rng.random::<f64>();
                vec![r * a.cos(), r * a.sin()]
            })
            .collect();
        PointConfiguration::new(2, pts).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let flat2 = PotentialSpec { dim: 2, kind: crate::potential::PotentialKind::Radial { coeffs: vec![0.0] } };
        let c = PointConfiguration::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(hamiltonian(&c, &flat2).unwrap(), 0.0);
        let flat3 = PotentialSpec { dim: 3, kind: crate::potential::PotentialKind::Radial { coeffs: vec![0.0] } };
        let c = PointConfiguration::new(3, vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_relative_eq!(hamiltonian(&c, &flat3).unwrap(), 2.0);
        let c = PointConfiguration::new(2, vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_relative_eq!(
            hamiltonian(&c, &PotentialSpec::quadratic(2)).unwrap(),
            4.0 - 2.0 * 2f64.ln(),
            epsilon = 1e-14
        );
        let c = PointConfiguration::new(2, vec![vec![0.5, 0.5], vec![0.1, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(
            hamiltonian(&c, &PotentialSpec::quadratic(2)).unwrap_err(),
            LabError::CoincidentPoints { i: 0, j: 2 }
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for d in 1..=3 {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
            let c = PointConfiguration::new(d, pts).unwrap();
            let v = PotentialSpec::quadratic(d);
            let g = hamiltonian_gradient(&c, &v);
            let e = 1e-6;
            for i in 0..6 {
                for k in 0..d {
                    let mut a = c.clone();
                    let mut b = c.clone();
                    a.points[i][k] += e;
                    b.points[i][k] -= e;
                    let fd = (hamiltonian(&a, &v).unwrap() - hamiltonian(&b, &v).unwrap()) / (2.0 * e);
                    assert_relative_eq!(fd, g[i][k], epsilon = 1e-5, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_point_next_order_energy() {
        let eq = circle_law();
        let c = PointConfiguration::new(2, vec![vec![0.0, 0.0]]).unwrap().blow_up();
        let t = truncated_field_energy(&c, eq, Some(1e-3)).unwrap();
        assert!((t.value + 1.5 * PI).abs() <= 2e-2, "{}", t.value);
        let r = splitting_report(&c.blow_down(), eq, Some(1e-3)).unwrap();
        assert!(r.residual.abs() <= 2e-2);
        assert_eq!(r.hamiltonian, 0.0);
    }

    #[test]
    fn two_far_points_reduce_to_direct_formula() {
        // background held locally constant: only the cross term changes with the separation
        let eq = circle_law();
        let eta = 0.05;
        let a = PointConfiguration { dim: 2, points: vec![vec![-0.5, 0.0], vec![0.5, 0.0]], blown_up: true };
        let b = PointConfiguration { dim: 2, points: vec![vec![-0.6, 0.0], vec![0.6, 0.0]], blown_up: true };
        let ea = truncated_field_energy(&a, eq, Some(eta)).unwrap().value;
        let eb = truncated_field_energy(&b, eq, Some(eta)).unwrap().value;
        let direct = 2.0 * PI * 2.0 * (-(1.0f64).ln() + 1.2f64.ln());
        let pot = PointPotential::new(eq);
        let s = 2f64.sqrt();
        let bg = |x: f64| {
            let p = [x / s, 0.0];
            2.0 * (pot.value(&p) + pot.ball_correction(&p, eta / s))
        };
        let background = 2.0 * PI * -2.0 * (2.0 * bg(0.5) - 2.0 * bg(0.6));
        assert_relative_eq!(ea - eb, direct + background, epsilon = 1e-6);
    }

    #[test]
    fn monotonicity_in_eta() {
        let eq = circle_law();
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let c = random_disk(12, seed).blow_up();
            let sep = c.min_separation();
            let eta = 0.4 * sep;
            let alpha = 0.2 * sep;
            let fe = truncated_field_energy(&c, eq, Some(eta)).unwrap().value;
            let fa = truncated_field_energy(&c, eq, Some(alpha)).unwrap().value;
            let band = c.n() as f64 * eta * eq.density.max();
            worst = worst.max((fe - fa).abs() / band);
        }
        assert!(worst <= 10.0, "measured constant {worst}");
    }

    #[test]
    fn splitting_random_configurations() {
        let eq = circle_law();
        for seed in 0..5 {
            let c = random_disk(20, seed);
            let r = splitting_report(&c, eq, None).unwrap();
            assert!(r.residual.abs() <= 1e-2 * r.hamiltonian.abs(), "{r:?}");
            assert!(r.residual.abs() <= r.quadrature_tolerance, "{r:?}");
            assert!(!r.overlap);
        }
    }

    #[test]
    fn splitting_in_one_dimension() {
        let cfg = EquilibriumConfig::default_box(1, 5.0 / 1024.0);
        let eq = solve_equilibrium_direct(&PotentialSpec::quadratic(1), &cfg).unwrap();
        let c = PointConfiguration::new(1, vec![vec![-1.1], vec![-0.3], vec![0.4], vec![1.2]]).unwrap();
        let r = splitting_report(&c, &eq, None).unwrap();
        assert!(r.residual.abs() <= 5e-2 * r.hamiltonian.abs(), "{r:?}");
    }

    #[test]
    fn splitting_in_three_dimensions() {
        let cfg = EquilibriumConfig::on_box(vec![-2.0; 3], vec![2.0; 3], 1.0 / 8.0);
        let eq = solve_equilibrium_direct(&PotentialSpec::quadratic(3), &cfg).unwrap();
        let c = PointConfiguration::new(3, vec![vec![0.1, 0.2, -0.3], vec![-0.4, 0.1, 0.2], vec![0.3, -0.5, 0.1]]).unwrap();
        let r = splitting_report(&c, &eq, None).unwrap();
        assert!(r.residual.abs() <= 1e-2 * r.hamiltonian.abs(), "{r:?}");
    }

    #[test]
    fn grid_oracle_agrees_with_newton_reduction() {
        let eq = circle_law();
        let c = PointConfiguration::new(
            2,
            vec![vec![0.3, 0.1], vec![-0.4, 0.35], vec![0.05, -0.6], vec![-0.2, -0.2]],
        )
        .unwrap();
        let blown = c.blow_up();
        let eta = 0.1;
        let newton = truncated_field_energy(&blown, eq, Some(eta)).unwrap().value;
        let side = 6.0 * 2.0 * 2.0;
        let grad = circle_law_background_gradient(4);
        let (grid, tail) = field_energy_grid(&blown, eta, &grad, GridRegion::Square { side }, 0.004).unwrap();
        let kernel = KernelSpec::new(2).unwrap();
        let oracle = grid - 4.0 * 2.0 * PI * kernel.g(eta);
        assert!((oracle - newton).abs() <= tail + 2e-2 * newton.abs().max(1.0), "{oracle} vs {newton} (tail {tail})");
    }

    #[test]
    fn discrepancy_examples() {
        let eq = circle_law();
        let empty = PointConfiguration { dim: 2, points: vec![vec![10.0, 10.0]], blown_up: true };
        let d = discrepancy(&empty, &[0.0, 0.0], 0.5, eq).unwrap();
        assert_relative_eq!(d, -ball_mass(eq, &[0.0, 0.0], 0.5), epsilon = 1e-12);
        // μ₀' vanishes near (3, 3) for n = 1
        let one = PointConfiguration { dim: 2, points: vec![vec![3.0, 3.0]], blown_up: true };
        assert_eq!(discrepancy(&one, &[3.0, 3.0], 0.5, eq).unwrap(), 1.0);
        assert_relative_eq!(ball_mass(eq, &[0.0, 0.0], 0.5), 0.25, epsilon = 5e-3);
    }

    #[test]
    fn lower_bound_examples() {
        let eq = circle_law();
        let one = PointConfiguration::new(2, vec![vec![0.0, 0.0]]).unwrap();
        assert!(easy_lower_bound_check(&one, eq).unwrap().holds);
        let mut fitted: f64 = 0.0;
        for seed in 0..100 {
            let c = random_disk(50, 1000 + seed);
            let check = easy_lower_bound_check(&c, eq).unwrap();
            assert!(check.holds);
            fitted = fitted.max(check.fitted_constant);
        }
        assert!(fitted < 50.0);
        let mut close = random_disk(10, 3);
        close.points[1] = vec![close.points[0][0] + 1e-200, close.points[0][1]];
        let check = easy_lower_bound_check(&close, eq).unwrap();
        assert!(check.holds);
        close.points[1] = close.points[0].clone();
        assert!(easy_lower_bound_check(&close, eq).unwrap().holds);
    }

    #[test]
    fn tree_sum_is_stable_across_thread_counts() {
        let c = random_disk(300, 5);
        let v = PotentialSpec::quadratic(2);
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| hamiltonian(&c, &v).unwrap());
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| hamiltonian(&c, &v).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn relabeling_invariance(seed in 0u64..1000, shift in 1usize..9) {
            let eq = circle_law();
            let c = random_disk(9, seed);
            let mut p = c.clone();
            p.points.rotate_left(shift);
            p.points.swap(0, 3);
            let v = &eq.potential;
            let h1 = hamiltonian(&c, v).unwrap();
            let h2 = hamiltonian(&p, v).unwrap();
            prop_assert!((h1 - h2).abs() <= 1e-12 * h1.abs().max(1.0));
            let t1 = truncated_field_energy(&c.blow_up(), eq, Some(0.01)).unwrap().value;
            let t2 = truncated_field_energy(&p.blow_up(), eq, Some(0.01)).unwrap().value;
            prop_assert!((t1 - t2).abs() <= 1e-10 * t1.abs().max(1.0));
        }
    }
}
