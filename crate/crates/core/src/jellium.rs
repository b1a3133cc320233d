//! Renormalized energies of periodic configurations: torus Green functions, the periodic
//! energy formula, lattice heights and the Epstein zeta function.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::special::{exp_integral_e1, gamma, upper_gamma};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Ewald sums keep terms whose Gaussian factor exceeds `e^{-EWALD_CUTOFF}`.
const EWALD_CUTOFF: f64 = 40.0;

/// A lattice in `R^1` or `R^2`. The planar basis is Lagrange–Gauss reduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusLattice {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
    /// `⟨basis_i, dual_j⟩ = δ_ij`
    pub dual: Vec<Vec<f64>>,
    pub volume: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TorusLattice {
    pub fn line(length: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(LabError::Domain(format!("torus length must be positive, got {length}")));
        }
        Ok(Self { dim: 1, basis: vec![vec![length]], dual: vec![vec![1.0 / length]], volume: length })
    }

    pub fn plane(u: [f64; 2], v: [f64; 2]) -> Result<Self> {
        let det = u[0] * v[1] - u[1] * v[0];
        if !(det.abs() > 0.0 && det.is_finite()) {
            return Err(LabError::Domain("lattice basis is degenerate".into()));
        }
        let (mut a, mut b) = (u, v);
        // Lagrange–Gauss reduction
        loop {
            if dot(&a, &a) > dot(&b, &b) {
                std::mem::swap(&mut a, &mut b);
            }
            let mu = (dot(&a, &b) / dot(&a, &a)).round();
            if mu == 0.0 {
                break;
            }
            b = [b[0] - mu * a[0], b[1] - mu * a[1]];
            if dot(&b, &b) >= dot(&a, &a) {
                break;
            }
        }
        let det = a[0] * b[1] - a[1] * b[0];
        let dual = vec![vec![b[1] / det, -b[0] / det], vec![-a[1] / det, a[0] / det]];
        Ok(Self { dim: 2, basis: vec![a.to_vec(), b.to_vec()], dual, volume: det.abs() })
    }

    /// Lattice `√(V/Im τ) (ℤ + τℤ)` of volume `V`.
    pub fn from_modular(tau: ModularPoint, volume: f64) -> Result<Self> {
        let s = (volume / tau.im).sqrt();
        Self::plane([s, 0.0], [s * tau.re, s * tau.im])
    }

    /// Same lattice dilated by `λ`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        match self.dim {
            1 => Self::line(self.volume * lambda),
            _ => {
                let u = [self.basis[0][0] * lambda, self.basis[0][1] * lambda];
                let v = [self.basis[1][0] * lambda, self.basis[1][1] * lambda];
                Self::plane(u, v)
            }
        }
    }

    /// Coordinates of `x` in the basis, reduced to `[0, 1)`.
    pub fn fractional(&self, x: &[f64]) -> Vec<f64> {
        self.dual.iter().map(|d| dot(x, d).rem_euclid(1.0)).map(|t| if t >= 1.0 { 0.0 } else { t }).collect()
    }

    /// Representative of `x` in the fundamental parallelogram spanned by the basis.
    pub fn reduce(&self, x: &[f64]) -> Vec<f64> {
        let t = self.fractional(x);
        (0..self.dim).map(|k| (0..self.dim).map(|i| t[i] * self.basis[i][k]).sum()).collect()
    }

    /// Shortest representative of `x` modulo the lattice.
    pub fn minimal_image(&self, x: &[f64]) -> Vec<f64> {
        let t: Vec<f64> = self.dual.iter().map(|d| dot(x, d)).map(|t| t - t.round()).collect();
        let base: Vec<f64> = (0..self.dim).map(|k| (0..self.dim).map(|i| t[i] * self.basis[i][k]).sum()).collect();
        if self.dim == 1 {
            return base;
        }
        let mut best = base.clone();
        let mut best_r = dot(&base, &base);
        for i in -1i32..=1 {
            for j in -1i32..=1 {
                let y = [
                    base[0] + i as f64 * self.basis[0][0] + j as f64 * self.basis[1][0],
                    base[1] + i as f64 * self.basis[0][1] + j as f64 * self.basis[1][1],
                ];
                let r = dot(&y, &y);
                if r < best_r {
                    best_r = r;
                    best = y.to_vec();
                }
            }
        }
        best
    }

    /// Planar vectors `i b_0 + j b_1` with norm at most `radius`, for a basis `b` with dual `d`.
    fn vectors_within(basis: &[Vec<f64>], dual: &[Vec<f64>], radius: f64) -> Vec<[f64; 2]> {
        let ni = (radius * dot(&dual[0], &dual[0]).sqrt()).ceil() as i64 + 1;
        let nj = (radius * dot(&dual[1], &dual[1]).sqrt()).ceil() as i64 + 1;
        let mut out = Vec::new();
        for i in -ni..=ni {
            for j in -nj..=nj {
                let v = [
                    i as f64 * basis[0][0] + j as f64 * basis[1][0],
                    i as f64 * basis[0][1] + j as f64 * basis[1][1],
                ];
                if dot(&v, &v) <= radius * radius {
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Precomputed Ewald sums for the planar torus Green function.
#[derive(Debug, Clone)]
pub struct Ewald {
    lattice: TorusLattice,
    alpha: f64,
    real: Vec<[f64; 2]>,
    /// `(k, e^{-π²|k|²/α²} / (4π²|k|² |T|))`
    recip: Vec<([f64; 2], f64)>,
    regular_part: f64,
}

impl Ewald {
    /// Splitting parameter `α = √(π/|T|)`.
    pub fn new(lattice: &TorusLattice) -> Result<Self> {
        if lattice.dim != 2 {
            return Err(LabError::Capability("Ewald sums are planar".into()));
        }
        let vol = lattice.volume;
        let alpha = (PI / vol).sqrt();
        let diam = (dot(&lattice.basis[0], &lattice.basis[0]).sqrt() + dot(&lattice.basis[1], &lattice.basis[1]).sqrt()) * 0.5;
        let r_real = EWALD_CUTOFF.sqrt() / alpha + diam;
        let real = TorusLattice::vectors_within(&lattice.basis, &lattice.dual, r_real);
        let k_max = EWALD_CUTOFF.sqrt() * alpha / PI;
        let recip = TorusLattice::vectors_within(&lattice.dual, &lattice.basis, k_max)
            .into_iter()
            .filter(|k| k[0] != 0.0 || k[1] != 0.0)
            .map(|k| {
                let k2 = dot(&k, &k);
                (k, (-PI * PI * k2 / (alpha * alpha)).exp() / (4.0 * PI * PI * k2 * vol))
            })
            .collect::<Vec<_>>();
        let mut e = Self { lattice: lattice.clone(), alpha, real, recip, regular_part: 0.0 };
        // lim_{x→0} (G(x) + log|x| / 2π), from E1(z) = -γ - log z + O(z)
        let a2 = alpha * alpha;
        let mut images = 0.0;
        for l in &e.real {
            let r2 = dot(l, l);
            if r2 > 0.0 && a2 * r2 <= EWALD_CUTOFF + 10.0 {
                images += exp_integral_e1(a2 * r2);
            }
        }
        let recip_sum: f64 = e.recip.iter().map(|(_, c)| c).sum();
        e.regular_part = (-EULER_GAMMA - a2.ln() + images) / (4.0 * PI) - 1.0 / (4.0 * a2 * vol) + recip_sum;
        Ok(e)
    }

    pub fn green(&self, x: &[f64]) -> Result<f64> {
        let y = self.lattice.minimal_image(x);
        if y[0] == 0.0 && y[1] == 0.0 {
            return Err(LabError::Singularity("torus Green function evaluated on the lattice".into()));
        }
        let a2 = self.alpha * self.alpha;
        let mut real = 0.0;
        for l in &self.real {
            let d = [y[0] - l[0], y[1] - l[1]];
            let z = a2 * dot(&d, &d);
            if z <= EWALD_CUTOFF + 10.0 {
                real += exp_integral_e1(z);
            }
        }
        let recip: f64 = self.recip.iter().map(|(k, c)| c * (2.0 * PI * dot(k, &y)).cos()).sum();
        Ok(real / (4.0 * PI) - 1.0 / (4.0 * a2 * self.lattice.volume) + recip)
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let y = self.lattice.minimal_image(x);
        let a2 = self.alpha * self.alpha;
        let mut g = [0.0, 0.0];
        for l in &self.real {
            let d = [y[0] - l[0], y[1] - l[1]];
            let r2 = dot(&d, &d);
            if r2 == 0.0 || a2 * r2 > EWALD_CUTOFF + 10.0 {
                continue;
            }
            let f = -(-a2 * r2).exp() / (2.0 * PI * r2);
            g[0] += f * d[0];
            g[1] += f * d[1];
        }
        for (k, c) in &self.recip {
            let s = (2.0 * PI * dot(k, &y)).sin();
            g[0] -= c * 2.0 * PI * k[0] * s;
            g[1] -= c * 2.0 * PI * k[1] * s;
        }
        g
    }

    /// `lim_{x→0} (G(x) - g(x)/c_2)`
    pub fn regular_part(&self) -> f64 {
        self.regular_part
    }
}

/// Green function kernel of either torus dimension.
#[derive(Debug, Clone)]
enum TorusKernel {
    Line { length: f64 },
    Plane(Box<Ewald>),
}

impl TorusKernel {
    fn new(lattice: &TorusLattice) -> Result<Self> {
        match lattice.dim {
            1 => Ok(Self::Line { length: lattice.volume }),
            2 => Ok(Self::Plane(Box::new(Ewald::new(lattice)?))),
            d => Err(LabError::Capability(format!("periodic energies in dimension {d} are not supported"))),
        }
    }

    fn green(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Line { length } => {
                let t = x[0].rem_euclid(*length);
                if t == 0.0 || t == *length {
                    return Err(LabError::Singularity("torus Green function evaluated on the lattice".into()));
                }
                Ok(-(2.0 * (PI * t / length).sin()).ln() / (2.0 * PI))
            }
            Self::Plane(e) => e.green(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Line { length } => vec![-1.0 / (2.0 * length) / (PI * x[0] / length).tan()],
            Self::Plane(e) => e.gradient(x).to_vec(),
        }
    }

    fn regular_part(&self) -> f64 {
        match self {
            Self::Line { length } => -(2.0 * PI / length).ln() / (2.0 * PI),
            Self::Plane(e) => e.regular_part(),
        }
    }
}

/// `G` with `-ΔG = δ₀ - 1/|T|`, `∫_T G = 0`. On the line, the field lives in the strip
/// `ℝ/Lℤ × ℝ` and `G(x) = -(1/2π) log|2 sin(πx/L)|`.
pub fn torus_green(lattice: &TorusLattice, x: &[f64]) -> Result<f64> {
    if x.len() != lattice.dim {
        return Err(LabError::Domain("point and lattice dimensions differ".into()));
    }
    TorusKernel::new(lattice)?.green(x)
}

/// `lim_{x→0} (G(x) + log|x| / 2π)`
pub fn torus_green_regular_part(lattice: &TorusLattice) -> Result<f64> {
    Ok(TorusKernel::new(lattice)?.regular_part())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusConfiguration {
    pub lattice: TorusLattice,
    pub points: Vec<Vec<f64>>,
}

impl TorusConfiguration {
    pub fn new(lattice: TorusLattice, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.iter().any(|p| p.len() != lattice.dim || p.iter().any(|v| !v.is_finite())) {
            return Err(LabError::Domain("points must be finite and match the lattice dimension".into()));
        }
        let points = points.iter().map(|p| lattice.reduce(p)).collect();
        Ok(Self { lattice, points })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Points coinciding modulo the lattice.
    pub fn coincident_pair(&self) -> Option<(usize, usize)> {
        let scale = self.lattice.volume.powf(1.0 / self.lattice.dim as f64);
        for i in 0..self.n() {
            for j in i + 1..self.n() {
                let d: Vec<f64> = self.points[i].iter().zip(&self.points[j]).map(|(a, b)| a - b).collect();
                let m = self.lattice.minimal_image(&d);
                if dot(&m, &m).sqrt() <= 1e-14 * scale {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Equally spaced points on a line torus of length `n`.
    pub fn equally_spaced(n: usize) -> Result<Self> {
        Self::new(TorusLattice::line(n as f64)?, (0..n).map(|i| vec![i as f64]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicEnergy {
    /// `+∞` when two points coincide.
    pub value: f64,
    pub coincident: Option<(usize, usize)>,
}

/// `𝒲 = (c²/|T|) (Σ_{i≠j} G(a_i - a_j) + N lim_{x→0}(G - g/c))` with `c = 2π`; for
/// `|T| = N` this is `(c²/N) Σ_{i≠j} G + c² lim(G - g/c)`.
pub fn periodic_w(config: &TorusConfiguration) -> Result<PeriodicEnergy> {
    if let Some(pair) = config.coincident_pair() {
        return Ok(PeriodicEnergy { value: f64::INFINITY, coincident: Some(pair) });
    }
    let kernel = TorusKernel::new(&config.lattice)?;
    Ok(PeriodicEnergy { value: periodic_w_with(config, &kernel)?, coincident: None })
}

fn periodic_w_with(config: &TorusConfiguration, kernel: &TorusKernel) -> Result<f64> {
    let n = config.n();
    let mut pairs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in i + 1..n {
            let d: Vec<f64> = config.points[i].iter().zip(&config.points[j]).map(|(a, b)| a - b).collect();
            pairs.push(kernel.green(&d)?);
        }
    }
    let c2 = 4.0 * PI * PI;
    let sum = 2.0 * crate::gas_energy::tree_sum(&pairs) + n as f64 * kernel.regular_part();
    Ok(c2 * sum / config.lattice.volume)
}

fn periodic_gradient(config: &TorusConfiguration, kernel: &TorusKernel) -> Vec<Vec<f64>> {
    let n = config.n();
    let d = config.lattice.dim;
    let c2 = 4.0 * PI * PI / config.lattice.volume;
    let mut grad = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff: Vec<f64> = config.points[i].iter().zip(&config.points[j]).map(|(a, b)| a - b).collect();
            let g = kernel.gradient(&diff);
            for k in 0..d {
                grad[i][k] += 2.0 * c2 * g[k];
            }
        }
    }
    grad
}

/// `τ = re + i im`, `im > 0`, labelling the unimodular lattice `ℤ + τℤ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModularPoint {
    pub re: f64,
    pub im: f64,
}

impl ModularPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !(im > 0.0 && re.is_finite() && im.is_finite()) {
            return Err(LabError::Domain(format!("τ must lie in the upper half plane, got {re} + {im}i")));
        }
        Ok(Self { re, im })
    }

    pub fn square() -> Self {
        Self { re: 0.0, im: 1.0 }
    }

    pub fn triangular() -> Self {
        Self { re: 0.5, im: 3f64.sqrt() / 2.0 }
    }

    /// Representative in `|τ| ≥ 1`, `|Re τ| ≤ 1/2`.
    pub fn reduce(self) -> Self {
        let (mut x, mut y) = (self.re, self.im);
        for _ in 0..1000 {
            x -= x.round();
            let r2 = x * x + y * y;
            if r2 < 1.0 - 1e-15 {
                x = -x / r2;
                y /= r2;
            } else {
                break;
            }
        }
        Self { re: x, im: y }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        ((self.re - other.re).powi(2) + (self.im - other.im).powi(2)).sqrt()
    }
}

/// `log(√(Im τ) |η(τ)|²)` for the Dedekind eta, by its q-product.
fn log_sqrt_im_eta2(t: ModularPoint) -> f64 {
    let q = (-2.0 * PI * t.im).exp();
    let mut s = 0.5 * t.im.ln() - PI * t.im / 6.0;
    let mut qn = 1.0;
    for n in 1..=60 {
        qn *= q;
        let c = (2.0 * PI * n as f64 * t.re).cos();
        s += (-2.0 * qn * c + qn * qn).ln_1p();
        if qn < 1e-18 {
            break;
        }
    }
    s
}

/// `-2π log(√(Im τ) |η(τ)|²)`, modular invariant and equal to `𝒲` of the unit-volume
/// lattice up to one additive constant.
pub fn lattice_height(tau: ModularPoint) -> f64 {
    -2.0 * PI * log_sqrt_im_eta2(tau.reduce())
}

/// `Σ_{k∈Λ*\0} |k|^{-(2+x)} - ∫_{ℝ²} dy / (1 + |y|^{2+x})` for the unit-volume lattice of
/// `τ`, by the theta-function Mellin split at `t = 1`.
pub fn epstein_zeta_reg(tau: ModularPoint, x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(LabError::Domain(format!("Epstein regularization needs 0 < x ≤ 1, got {x}")));
    }
    let lattice = TorusLattice::from_modular(tau.reduce(), 1.0)?;
    let s = 1.0 + 0.5 * x;
    let radius = (60.0 / PI).sqrt();
    let mut direct = 0.0;
    for k in TorusLattice::vectors_within(&lattice.dual, &lattice.basis, radius) {
        let t = PI * dot(&k, &k);
        if t > 0.0 {
            direct += t.powf(-s) * upper_gamma(s, t);
        }
    }
    let mut dual_side = 0.0;
    for l in TorusLattice::vectors_within(&lattice.basis, &lattice.dual, radius) {
        let t = PI * dot(&l, &l);
        if t > 0.0 {
            dual_side += t.powf(s - 1.0) * upper_gamma(1.0 - s, t);
        }
    }
    let zeta = PI.powf(s) / gamma(s) * (direct + dual_side + 1.0 / (s - 1.0) - 1.0 / s);
    let b = 2.0 + x;
    let background = 2.0 * PI * PI / (b * (2.0 * PI / b).sin());
    Ok(zeta - background)
}

/// `lattice_height` on a `m × m` grid of the fundamental domain modulo reflection,
/// `0 ≤ Re τ ≤ 1/2`, `√(1 - Re τ²) ≤ Im τ ≤ 2`. Rows are `(Re τ, Im τ, height)`.
pub fn scan_lattices(m: usize) -> Result<Vec<(f64, f64, f64)>> {
    if m < 2 {
        return Err(LabError::Domain("scan grid needs at least 2 nodes per axis".into()));
    }
    let top = 2.0;
    let mut rows = Vec::with_capacity(m * m);
    for i in 0..m {
        let x = 0.5 * i as f64 / (m - 1) as f64;
        let bottom = (1.0 - x * x).sqrt();
        for j in 0..m {
            let y = bottom + (top - bottom) * j as f64 / (m - 1) as f64;
            rows.push((x, y, lattice_height(ModularPoint::new(x, y)?)));
        }
    }
    Ok(rows)
}

/// Descent on `𝒲` from a seeded uniform start, Barzilai–Borwein steps with a
/// non-monotone safeguard, until the gradient sup-norm is at most `1e-8`.
pub fn minimize_torus_config(lattice: &TorusLattice, n: usize, seed: u64) -> Result<(TorusConfiguration, f64)> {
    if n < 2 {
        return Err(LabError::Domain("minimization needs at least two points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let t: Vec<f64> = (0..lattice.dim).map(|_| rng.random::<f64>()).collect();
            (0..lattice.dim).map(|k| (0..lattice.dim).map(|i| t[i] * lattice.basis[i][k]).sum()).collect()
        })
        .collect();
    let kernel = TorusKernel::new(lattice)?;
    let mut config = TorusConfiguration::new(lattice.clone(), start)?;
    let mut energy = periodic_w_with(&config, &kernel)?;
    let mut grad = periodic_gradient(&config, &kernel);
    let scale = lattice.volume.powf(1.0 / lattice.dim as f64) / n as f64;
    let mut step = 1e-3 * scale * scale;
    let mut history = vec![energy];
    let max_iterations = 20_000;
    let sup = |g: &Vec<Vec<f64>>| g.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for _ in 0..max_iterations {
        if sup(&grad) <= 1e-8 {
            return Ok((config, energy));
        }
        let reference = history.iter().rev().take(10).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut t = step;
        let (next, next_e) = loop {
            let moved: Vec<Vec<f64>> = config
                .points
                .iter()
                .zip(&grad)
                .map(|(p, g)| {
                    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let cap = if t * g_norm > 0.25 * scale { 0.25 * scale / (t * g_norm) } else { 1.0 };
                    p.iter().zip(g).map(|(a, b)| a - cap * t * b).collect()
                })
                .collect();
            let trial = TorusConfiguration::new(lattice.clone(), moved)?;
            let e = if trial.coincident_pair().is_some() { f64::INFINITY } else { periodic_w_with(&trial, &kernel)? };
            if e.is_finite() && e <= reference + 1e-12 * reference.abs().max(1.0) {
                break (trial, e);
            }
            t *= 0.5;
            if t < 1e-30 {
                return Err(LabError::NoConvergence {
                    method: "torus descent line search",
                    iterations: history.len(),
                    residual: sup(&grad),
                });
            }
        };
        let next_grad = periodic_gradient(&next, &kernel);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let d: Vec<f64> = next.points[i].iter().zip(&config.points[i]).map(|(a, b)| a - b).collect();
            let dm = lattice.minimal_image(&d);
            for k in 0..lattice.dim {
                ss += dm[k] * dm[k];
                sy += dm[k] * (next_grad[i][k] - grad[i][k]);
            }
        }
        step = if sy > 0.0 { ss / sy } else { 2.0 * t };
        config = next;
        energy = next_e;
        grad = next_grad;
        history.push(energy);
    }
    Err(LabError::NoConvergence { method: "torus descent", iterations: max_iterations, residual: energy })
}

/// `(𝒲 of the configuration rescaled to density m, m 𝒲 - (2π/d) m log m)` for a
/// configuration of unit density.
pub fn scaling_check(config: &TorusConfiguration, m: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) {
        return Err(LabError::Domain(format!("density must be positive, got {m}")));
    }
    let d = config.lattice.dim;
    if (config.lattice.volume - config.n() as f64).abs() > 1e-9 * config.lattice.volume {
        return Err(LabError::Domain("scaling_check expects |T| = N".into()));
    }
    let lambda = m.powf(-1.0 / d as f64);
    let lattice = config.lattice.scaled(lambda)?;
    let points = config.points.iter().map(|p| p.iter().map(|v| v * lambda).collect()).collect();
    let scaled = TorusConfiguration::new(lattice, points)?;
    let w = periodic_w(config)?.value;
    let ws = periodic_w(&scaled)?.value;
    Ok((ws, m * w - 2.0 * PI / d as f64 * m * m.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};

    fn rect(a: f64, b: f64) -> TorusLattice {
        TorusLattice::plane([a, 0.0], [0.0, b]).unwrap()
    }

    /// Rectangular torus Green function with the sum over one index done in closed form.
    fn rectangle_green_oracle(a: f64, b: f64, x: f64, y: f64) -> f64 {
        let vol = a * b;
        let theta = 2.0 * PI * (y / b).rem_euclid(1.0);
        let mut s = b * b * 2.0 * (PI * PI / 6.0 - PI * theta / 2.0 + theta * theta / 4.0);
        for m in 1..200 {
            let c = b * m as f64 / a;
            let term = b * b * (PI / c) * (c * (PI - theta)).cosh() / (c * PI).sinh();
            s += 2.0 * term * (2.0 * PI * m as f64 * x / a).cos();
            if term.abs() < 1e-18 {
                break;
            }
        }
        s / (4.0 * PI * PI * vol)
    }

    #[test]
    fn line_green_example() {
        let l = TorusLattice::line(4.0).unwrap();
        assert_relative_eq!(torus_green(&l, &[1.0]).unwrap(), -0.5 * 2f64.ln() / (2.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(torus_green(&l, &[1.0]).unwrap(), -0.055_158_9, epsilon = 1e-7);
        assert!(matches!(torus_green(&l, &[8.0]), Err(LabError::Singularity(_))));
    }

    #[test]
    fn ewald_matches_rectangle_oracle() {
        for &(a, b) in &[(1.0, 1.0), (2.0, 1.5), (1.0, 4.0), (10.0, 10.0)] {
            let l = rect(a, b);
            for &(x, y) in &[(0.1 * a, 0.3 * b), (0.5 * a, 0.5 * b), (0.77 * a, 0.05 * b), (0.0, 0.4 * b)] {
                let g = torus_green(&l, &[x, y]).unwrap();
                let o = rectangle_green_oracle(a, b, x, y);
                assert!((g - o).abs() <= 1e-10, "{a}×{b} at ({x}, {y}): {g} vs {o}");
            }
        }
    }

    #[test]
    fn green_is_even() {
        let l = TorusLattice::from_modular(ModularPoint::new(0.3, 1.2).unwrap(), 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [rng.random::<f64>() * 3.0 - 1.5, rng.random::<f64>() * 3.0 - 1.5];
            let a = torus_green(&l, &x).unwrap();
            let b = torus_green(&l, &[-x[0], -x[1]]).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn green_has_zero_mean() {
        // smooth cutoff ψ = 1 near 0: ∫ G(1 - ψ) by the periodic trapezoid rule and ∫ G ψ
        // radially, using G = -log r / 2π + R + r² / 4|T| + (harmonic, zero circular mean)
        let l = TorusLattice::from_modular(ModularPoint::new(0.2, 1.1).unwrap(), 2.0).unwrap();
        let e = Ewald::new(&l).unwrap();
        let rho = 0.4;
        let step = |t: f64| {
            if t <= 0.0 {
                0.0
            } else if t >= 1.0 {
                1.0
            } else {
                let a = (-1.0 / t).exp();
                a / (a + (-1.0 / (1.0 - t)).exp())
            }
        };
        let psi = |r: f64| 1.0 - step((r - 0.5 * rho) / (0.5 * rho));
        let m = 240;
        let mut outer = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (s, t) = (i as f64 / m as f64, j as f64 / m as f64);
                let x = [s * l.basis[0][0] + t * l.basis[1][0], s * l.basis[0][1] + t * l.basis[1][1]];
                let y = l.minimal_image(&x);
                let r = dot(&y, &y).sqrt();
                let w = 1.0 - psi(r);
                if w > 0.0 {
                    outer += w * e.green(&x).unwrap();
                }
            }
        }
        outer *= l.volume / (m * m) as f64;
        let rr = e.regular_part();
        let inner: f64 = crate::special::gauss_legendre_on(400, 0.0, rho)
            .into_iter()
            .map(|(r, w)| w * psi(r) * (-r * r.ln() + 2.0 * PI * r * rr + 2.0 * PI * r.powi(3) / (4.0 * l.volume)))
            .sum();
        assert!((outer + inner).abs() <= 1e-6, "mean {}", outer + inner);
    }

    #[test]
    fn regular_part_matches_limit() {
        let l = rect(1.3, 0.9);
        let e = Ewald::new(&l).unwrap();
        let r = 1e-5;
        let approx = e.green(&[r, 0.0]).unwrap() + r.ln() / (2.0 * PI);
        // next correction is r²/(4|T|) plus a harmonic quadratic
        assert!((approx - e.regular_part()).abs() <= 1e-9);
    }

    #[test]
    fn equally_spaced_line_energy() {
        let target = -2.0 * PI * (2.0 * PI).ln();
        for n in 2..=64 {
            let c = TorusConfiguration::equally_spaced(n).unwrap();
            assert!((periodic_w(&c).unwrap().value - target).abs() <= 1e-9, "N = {n}");
        }
        let c = TorusConfiguration::new(TorusLattice::line(2.0).unwrap(), vec![vec![0.0], vec![1.2]]).unwrap();
        assert!(periodic_w(&c).unwrap().value > target);
    }

    #[test]
    fn perturbations_raise_line_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let n = 2 + trial % 15;
            let base = periodic_w(&TorusConfiguration::equally_spaced(n).unwrap()).unwrap().value;
            let pts = (0..n).map(|i| vec![i as f64 + 0.4 * (rng.random::<f64>() - 0.5)]).collect();
            let c = TorusConfiguration::new(TorusLattice::line(n as f64).unwrap(), pts).unwrap();
            assert!(periodic_w(&c).unwrap().value > base);
        }
    }

    #[test]
    fn coincident_points_are_infinite() {
        let c = TorusConfiguration::new(TorusLattice::line(3.0).unwrap(), vec![vec![0.5], vec![1.0], vec![3.5]]).unwrap();
        let e = periodic_w(&c).unwrap();
        assert_eq!(e.value, f64::INFINITY);
        assert_eq!(e.coincident, Some((0, 2)));
    }

    #[test]
    fn height_constant_is_shared() {
        let taus = [
            ModularPoint::square(),
            ModularPoint::triangular(),
            ModularPoint::new(0.0, 2.0).unwrap(),
            ModularPoint::new(0.31, 1.05).unwrap(),
            ModularPoint::new(-0.2, 1.7).unwrap(),
            ModularPoint::new(0.45, 0.95).unwrap(),
        ];
        let offsets: Vec<f64> = taus
            .iter()
            .map(|&t| {
                let l = TorusLattice::from_modular(t, 1.0).unwrap();
                let c = TorusConfiguration::new(l, vec![vec![0.0, 0.0]]).unwrap();
                periodic_w(&c).unwrap().value - lattice_height(t)
            })
            .collect();
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let sd = (offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / offsets.len() as f64).sqrt();
        assert!(sd <= 1e-6, "{offsets:?}");
        // measured offset coincides with the line minimum -2π log 2π
        assert!((mean + 2.0 * PI * (2.0 * PI).ln()).abs() <= 1e-9, "{mean}");
    }

    #[test]
    fn square_above_triangular() {
        let sq = lattice_height(ModularPoint::square());
        let tri = lattice_height(ModularPoint::triangular());
        assert!(sq - tri > 0.0);
        let w = |t| {
            let c = TorusConfiguration::new(TorusLattice::from_modular(t, 1.0).unwrap(), vec![vec![0.0, 0.0]]).unwrap();
            periodic_w(&c).unwrap().value
        };
        assert!(w(ModularPoint::square()) - w(ModularPoint::triangular()) > 0.0);
        assert_relative_eq!(
            w(ModularPoint::square()) - w(ModularPoint::triangular()),
            sq - tri,
            epsilon = 1e-9
        );
    }

    #[test]
    fn modular_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = ModularPoint::new(rng.random::<f64>() * 2.0 - 1.0, 0.3 + rng.random::<f64>() * 2.0).unwrap();
            let r2 = t.re * t.re + t.im * t.im;
            let inv = ModularPoint::new(-t.re / r2, t.im / r2).unwrap();
            let shift = ModularPoint::new(t.re + 1.0, t.im).unwrap();
            let h = lattice_height(t);
            assert!((h - lattice_height(inv)).abs() <= 1e-12 * h.abs().max(1.0));
            assert!((h - lattice_height(shift)).abs() <= 1e-12 * h.abs().max(1.0));
        }
    }

    #[test]
    fn dual_lattice_has_the_same_height() {
        for t in [ModularPoint::triangular(), ModularPoint::new(0.17, 1.3).unwrap()] {
            let l = TorusLattice::from_modular(t, 1.0).unwrap();
            let (u, v) = (&l.dual[0], &l.dual[1]);
            // τ of the dual basis: v/u as complex numbers, oriented to the upper half plane
            let den = u[0] * u[0] + u[1] * u[1];
            let re = (v[0] * u[0] + v[1] * u[1]) / den;
            let im = (v[1] * u[0] - v[0] * u[1]) / den;
            let td = ModularPoint::new(re, im.abs()).unwrap();
            assert!((lattice_height(td) - lattice_height(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn scan_argmin_is_triangular() {
        let rows = scan_lattices(101).unwrap();
        let best = rows.iter().min_by(|a, b| a.2.partial_cmp(&b.2).unwrap()).unwrap();
        let tri = ModularPoint::triangular();
        let nearest = rows
            .iter()
            .min_by(|a, b| {
                let da = ModularPoint { re: a.0, im: a.1 }.distance(&tri);
                let db = ModularPoint { re: b.0, im: b.1 }.distance(&tri);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!((best.0, best.1), (nearest.0, nearest.1));
    }

    #[test]
    fn epstein_reference_values() {
        // 4 ζ(s) β(s) and 6 (√3/2)^s ζ(s) L(s, χ₋₃), minus the background integral
        let cases = [
            (0.5, 1.805_383_805_620_664_8, 1.705_332_240_844_002_7),
            (0.1, 2.368_114_394_906_372_3, 2.295_483_876_673_474_5),
            (0.02, 2.537_968_359_960_290_1, 2.470_261_975_616_881_6),
            (1.0, 1.435_996_672_748_875_1, 1.295_120_090_045_215_6),
        ];
        for (x, sq, tri) in cases {
            assert!((epstein_zeta_reg(ModularPoint::square(), x).unwrap() - sq).abs() <= 1e-8);
            assert!((epstein_zeta_reg(ModularPoint::triangular(), x).unwrap() - tri).abs() <= 1e-8);
        }
        assert!(epstein_zeta_reg(ModularPoint::square(), 0.0).is_err());
    }

    #[test]
    fn epstein_ordering_and_symmetry() {
        for x in [0.5, 0.1, 0.02] {
            let tri = epstein_zeta_reg(ModularPoint::triangular(), x).unwrap();
            let sq = epstein_zeta_reg(ModularPoint::square(), x).unwrap();
            assert!(tri < sq);
        }
        let t = ModularPoint::new(0.23, 1.4).unwrap();
        let a = epstein_zeta_reg(t, 0.3).unwrap();
        let b = epstein_zeta_reg(ModularPoint::new(1.23, 1.4).unwrap(), 0.3).unwrap();
        assert!((a - b).abs() <= 1e-8);
    }

    #[test]
    fn epstein_ranking_matches_heights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let taus: Vec<ModularPoint> = (0..20)
            .map(|_| ModularPoint::new(rng.random::<f64>() - 0.5, 0.5 + 1.5 * rng.random::<f64>()).unwrap().reduce())
            .collect();
        let mut by_height: Vec<usize> = (0..20).collect();
        let mut by_zeta = by_height.clone();
        let h: Vec<f64> = taus.iter().map(|&t| lattice_height(t)).collect();
        let z: Vec<f64> = taus.iter().map(|&t| epstein_zeta_reg(t, 0.05).unwrap()).collect();
        by_height.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap());
        by_zeta.sort_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap());
        assert_eq!(by_height, by_zeta);
    }

    #[test]
    fn minimize_line() {
        let (c, e) = minimize_torus_config(&TorusLattice::line(8.0).unwrap(), 8, 1).unwrap();
        assert!((e + 2.0 * PI * (2.0 * PI).ln()).abs() <= 1e-6);
        let mut x: Vec<f64> = c.points.iter().map(|p| p[0]).collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in x.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn minimize_plane_prefers_triangular_cells() {
        let s = (4.0 / (2.0 * 3f64.sqrt())).sqrt();
        let tri_torus = rect(2.0 * s, 3f64.sqrt() * s);
        let sq_torus = rect(2.0, 2.0);
        let lattice_w = |t| {
            let c = TorusConfiguration::new(TorusLattice::from_modular(t, 1.0).unwrap(), vec![vec![0.0, 0.0]]).unwrap();
            periodic_w(&c).unwrap().value
        };
        let offset = lattice_w(ModularPoint::triangular()) - lattice_height(ModularPoint::triangular());
        let best = |l: &TorusLattice| {
            (0..20u64)
                .filter_map(|seed| minimize_torus_config(l, 4, seed).ok())
                .map(|(_, e)| e)
                .fold(f64::INFINITY, f64::min)
        };
        let tri = best(&tri_torus);
        let sq = best(&sq_torus);
        assert!((tri - (lattice_height(ModularPoint::triangular()) + offset)).abs() <= 1e-4, "{tri}");
        assert!(sq > tri);
    }

    #[test]
    fn scaling_law() {
        let c = TorusConfiguration::new(
            rect(2.0, 2.0),
            vec![vec![0.1, 0.2], vec![1.1, 0.2], vec![0.1, 1.2], vec![1.1, 1.2]],
        )
        .unwrap();
        let (a, b) = scaling_check(&c, 1.0).unwrap();
        assert_eq!(a, b);
        let (a, b) = scaling_check(&c, 4.0).unwrap();
        assert!((a - b).abs() <= 1e-8, "{a} {b}");
        let c = TorusConfiguration::equally_spaced(8).unwrap();
        let (a, b) = scaling_check(&c, 0.5).unwrap();
        assert!((a - b).abs() <= 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn translation_invariance(
            pts in proptest::collection::vec((0.0f64..2.0, 0.0f64..1.5), 2..6),
            shift in (-3.0f64..3.0, -3.0f64..3.0),
        ) {
            let l = TorusLattice::from_modular(ModularPoint::new(0.1, 1.3).unwrap(), 3.0).unwrap();
            let a: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let b: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + shift.0, p[1] + shift.1]).collect();
            let ca = TorusConfiguration::new(l.clone(), a).unwrap();
            prop_assume!(ca.coincident_pair().is_none());
            let wa = periodic_w(&ca).unwrap().value;
            let wb = periodic_w(&TorusConfiguration::new(l, b).unwrap()).unwrap().value;
            prop_assert!((wa - wb).abs() <= 1e-10 * wa.abs().max(1.0));
        }

        #[test]
        fn heights_and_epstein_agree_on_order(a in (-0.5f64..0.5, 0.9f64..1.8), b in (-0.5f64..0.5, 0.9f64..1.8)) {
            let ta = ModularPoint::new(a.0, a.1).unwrap().reduce();
            let tb = ModularPoint::new(b.0, b.1).unwrap().reduce();
            let dh = lattice_height(ta) - lattice_height(tb);
            prop_assume!(dh.abs() > 1e-6);
            let dz = epstein_zeta_reg(ta, 0.05).unwrap() - epstein_zeta_reg(tb, 0.05).unwrap();
            prop_assert_eq!(dh > 0.0, dz > 0.0);
        }
    }
}
