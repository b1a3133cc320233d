//! Metropolis sampling of the Gibbs measure `exp(-(β/2) H_n)`, empirical-measure
//! statistics and partition functions for very small `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumSolution;
use crate::error::{LabError, Result};
use crate::gas_energy::{ball_mass, hamiltonian, PointConfiguration};
use crate::potential::PotentialSpec;
use crate::special::{gauss_legendre_on, half_line_nodes, real_line_nodes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSpec {
    pub n: usize,
    pub beta: f64,
    pub potential: PotentialSpec,
    /// Initial proposal standard deviation.
    pub sigma: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Snapshot every `thin` sweeps after burn-in.
    pub thin: usize,
    pub seed: u64,
    /// Adapt `σ` towards acceptance 0.3 during burn-in.
    pub tune: bool,
}

impl GibbsSpec {
    pub fn new(n: usize, beta: f64, potential: PotentialSpec, sweeps: usize, seed: u64) -> Self {
        Self {
            n,
            beta,
            potential,
            sigma: 0.5 / (n as f64).powf(1.0 / 2.0),
            sweeps,
            burn_in: sweeps / 10,
            thin: 10,
            seed,
            tune: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LabError::Domain("the gas needs at least one point".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LabError::Domain(format!("β must be positive, got {}", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(LabError::Domain(format!("proposal step must be positive, got {}", self.sigma)));
        }
        if self.thin == 0 {
            return Err(LabError::Domain("snapshot interval must be positive".into()));
        }
        self.potential.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub snapshots: Vec<PointConfiguration>,
    /// `H_n` of every snapshot.
    pub energies: Vec<f64>,
    /// Post burn-in acceptance rate.
    pub acceptance_rate: f64,
    /// Proposals landing on another point, rejected.
    pub rejected_coincident: u64,
    pub sigma: f64,
}

/// `2 Σ_{j≠i} [g(y - x_j) - g(x_i - x_j)]`
fn interaction_change(points: &[f64], d: usize, i: usize, y: &[f64]) -> Option<f64> {
    let n = points.len() / d;
    let xi = &points[i * d..(i + 1) * d];
    if d <= 2 {
        // -Σ log(r_new² / r_old²) through chunked products
        let mut total = 0.0;
        let mut prod = 1.0f64;
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &points[j * d..(j + 1) * d];
            let mut rn = 0.0;
            let mut ro = 0.0;
            for k in 0..d {
                rn += (y[k] - xj[k]) * (y[k] - xj[k]);
                ro += (xi[k] - xj[k]) * (xi[k] - xj[k]);
            }
            if rn == 0.0 {
                return None;
            }
            prod *= rn / ro;
            if !(1e-100..=1e100).contains(&prod) {
                total += prod.ln();
                prod = 1.0;
            }
        }
        Some(-(total + prod.ln()))
    } else {
        let p = 1.0 - 0.5 * d as f64;
        let mut total = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &points[j * d..(j + 1) * d];
            let mut rn = 0.0;
            let mut ro = 0.0;
            for k in 0..d {
                rn += (y[k] - xj[k]) * (y[k] - xj[k]);
                ro += (xi[k] - xj[k]) * (xi[k] - xj[k]);
            }
            if rn == 0.0 {
                return None;
            }
            total += rn.powf(p) - ro.powf(p);
        }
        Some(2.0 * total)
    }
}

/// Single chain from stream 0 of the seed.
pub fn sample_gibbs(spec: &GibbsSpec) -> Result<Chain> {
    run_chain(spec, 0, 1.0)
}

/// Independent chains on streams `0..chains` of the seed, run in parallel.
pub fn sample_chains(spec: &GibbsSpec, chains: usize) -> Result<Vec<Chain>> {
    (0..chains as u64).into_par_iter().map(|c| run_chain(spec, c, 1.0)).collect()
}

/// Chain for `exp(-(β/2)(λ Σ_{i≠j} g + n Σ V))`.
fn run_chain(spec: &GibbsSpec, stream: u64, coupling: f64) -> Result<Chain> {
    spec.validate()?;
    let n = spec.n;
    let d = spec.potential.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let half_beta = 0.5 * spec.beta;
    let nf = n as f64;
    let mut sigma = spec.sigma;
    let mut snapshots = Vec::new();
    let mut energies = Vec::new();
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut window_accepted = 0u64;
    let mut window_proposed = 0u64;
    let mut coincident = 0u64;
    let mut y = vec![0.0; d];
    for sweep in 0..spec.burn_in + spec.sweeps {
        let counting = sweep >= spec.burn_in;
        for i in 0..n {
            for k in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                y[k] = x[i * d + k] + sigma * z;
            }
            let u: f64 = rng.random();
            let dv = spec.potential.value(&y) - spec.potential.value(&x[i * d..(i + 1) * d]);
            let delta = match interaction_change(&x, d, i, &y) {
                Some(di) => coupling * di + nf * dv,
                None => {
                    coincident += 1;
                    f64::INFINITY
                }
            };
            let accept = u.ln() < -half_beta * delta;
            if accept {
                x[i * d..(i + 1) * d].copy_from_slice(&y);
            }
            window_proposed += 1;
            window_accepted += accept as u64;
            if counting {
                proposed += 1;
                accepted += accept as u64;
            }
        }
        if !counting && spec.tune && (sweep + 1) % 50 == 0 {
            let rate = window_accepted as f64 / window_proposed as f64;
            sigma *= (2.0 * (rate - 0.3)).exp();
            window_accepted = 0;
            window_proposed = 0;
        }
        if counting && (sweep + 1 - spec.burn_in) % spec.thin == 0 {
            let cfg = PointConfiguration::new(d, x.chunks(d).map(|c| c.to_vec()).collect())?;
            let h = hamiltonian(&cfg, &spec.potential).unwrap_or(f64::INFINITY);
            energies.push(h);
            snapshots.push(cfg);
        }
    }
    Ok(Chain {
        snapshots,
        energies,
        acceptance_rate: if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 },
        rejected_coincident: coincident,
        sigma,
    })
}

/// Integrated autocorrelation time with Sokal's adaptive window `M ≥ 5 τ`.
pub fn autocorrelation_time(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag).map(|t| (series[t] - mean) * (series[t + lag] - mean)).sum::<f64>() / (n as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub acceptance_rate: f64,
    /// `(r, empirical radial CDF)` on 101 radii.
    pub radial_cdf: Vec<(f64, f64)>,
    /// Sup distance between the empirical radial CDF and that of `μ₀`.
    pub radial_cdf_distance: f64,
    /// Mean bounded-Lipschitz distance of the snapshots to `μ₀`.
    pub bl_distance: f64,
    pub mean_energy: f64,
    pub energy_standard_error: f64,
    pub autocorrelation_time: f64,
    pub rejected_coincident: u64,
}

/// All post burn-in radii, sorted.
pub fn pooled_radii(chains: &[Chain]) -> Vec<f64> {
    let mut r: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.snapshots.iter())
        .flat_map(|s| s.points.iter())
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    r
}

/// `sup_r |F_emp(r) - F(r)|` over sorted radii, checking both sides of every jump.
pub fn radial_cdf_distance(sorted_radii: &[f64], reference: &dyn Fn(f64) -> f64) -> f64 {
    let m = sorted_radii.len() as f64;
    let mut worst: f64 = 0.0;
    for (k, &r) in sorted_radii.iter().enumerate() {
        let f = reference(r);
        worst = worst.max((f - k as f64 / m).abs()).max((f - (k + 1) as f64 / m).abs());
    }
    worst
}

/// Radial CDF of the circle law, `min(r², 1)`.
pub fn circle_law_cdf(r: f64) -> f64 {
    (r * r).min(1.0)
}

/// Fraction of pooled points with `|x| > radius`.
pub fn fraction_outside(chains: &[Chain], radius: f64) -> f64 {
    let r = pooled_radii(chains);
    if r.is_empty() {
        return 0.0;
    }
    r.iter().filter(|&&v| v > radius).count() as f64 / r.len() as f64
}

pub fn chain_stats(chains: &[Chain], eq: &EquilibriumSolution) -> Result<ChainStats> {
    if chains.is_empty() || chains.iter().all(|c| c.snapshots.is_empty()) {
        return Err(LabError::Domain("no snapshots to summarize".into()));
    }
    let radii = pooled_radii(chains);
    let r_max = radii.last().copied().unwrap_or(1.0).max(eq.support_radius_estimate() * 1.2);
    let table: Vec<(f64, f64)> = (0..=100).map(|k| r_max * k as f64 / 100.0).map(|r| (r, ball_mass(eq, &vec![0.0; eq.kernel.dim], r))).collect();
    let reference = |r: f64| {
        if r >= r_max {
            return 1.0;
        }
        let t = r / r_max * 100.0;
        let k = (t.floor() as usize).min(99);
        let w = t - k as f64;
        table[k].1 * (1.0 - w) + table[k + 1].1 * w
    };
    let distance = radial_cdf_distance(&radii, &reference);
    let m = radii.len() as f64;
    let radial_cdf = table.iter().map(|&(r, _)| (r, radii.partition_point(|&v| v <= r) as f64 / m)).collect();
    let dict = BlDictionary::new(eq.kernel.dim);
    let mut bl = Vec::new();
    for c in chains {
        for s in c.snapshots.iter().step_by((c.snapshots.len() / 20).max(1)) {
            bl.push(dict.distance(s, eq));
        }
    }
    let energies: Vec<f64> = chains.iter().flat_map(|c| c.energies.iter().copied()).collect();
    let mean_energy = energies.iter().sum::<f64>() / energies.len() as f64;
    let tau = chains.iter().map(|c| autocorrelation_time(&c.energies)).sum::<f64>() / chains.len() as f64;
    let var = energies.iter().map(|e| (e - mean_energy).powi(2)).sum::<f64>() / energies.len() as f64;
    Ok(ChainStats {
        acceptance_rate: chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / chains.len() as f64,
        radial_cdf,
        radial_cdf_distance: distance,
        bl_distance: bl.iter().sum::<f64>() / bl.len() as f64,
        mean_energy,
        energy_standard_error: (var * tau / energies.len() as f64).sqrt(),
        autocorrelation_time: tau,
        rejected_coincident: chains.iter().map(|c| c.rejected_coincident).sum(),
    })
}

/// Test function with `‖f‖_∞ ≤ 1/2` and Lipschitz constant `1/2`.
#[derive(Debug, Clone, PartialEq)]
enum TestFunction {
    /// `½ clamp(s - |x - c|, -1, 1)`
    Radial { center: Vec<f64>, level: f64 },
    /// `½ clamp(s - ⟨u, x⟩, -1, 1)`
    Planar { direction: Vec<f64>, level: f64 },
}

impl TestFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        let t = match self {
            Self::Radial { center, level } => level - crate::kernels::distance(center, x),
            Self::Planar { direction, level } => level - x.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>(),
        };
        0.5 * t.clamp(-1.0, 1.0)
    }
}

/// Fixed dictionary of 200 bounded-Lipschitz test functions (version 1, seed 20240601).
#[derive(Debug, Clone)]
pub struct BlDictionary {
    functions: Vec<TestFunction>,
}

impl BlDictionary {
    pub const SIZE: usize = 200;

    pub fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
        let mut functions = vec![
            TestFunction::Radial { center: vec![0.0; dim], level: 0.0 },
            TestFunction::Radial { center: vec![0.0; dim], level: 0.5 },
            TestFunction::Radial { center: vec![0.0; dim], level: 1.0 },
        ];
        while functions.len() < Self::SIZE {
            if functions.len() % 2 == 0 {
                let center = (0..dim).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect();
                functions.push(TestFunction::Radial { center, level: rng.random::<f64>() * 2.0 - 0.5 });
            } else {
                let mut u: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                u.iter_mut().for_each(|v| *v /= norm);
                functions.push(TestFunction::Planar { direction: u, level: rng.random::<f64>() * 3.0 - 1.5 });
            }
        }
        Self { functions }
    }

    /// `max_f |(1/n) Σ f(x_i) - ∫ f dμ₀|` over the dictionary (midpoint rule for `μ₀`).
    pub fn distance(&self, config: &PointConfiguration, eq: &EquilibriumSolution) -> f64 {
        let weighted: Vec<(Vec<f64>, f64)> = config.points.iter().map(|p| (p.clone(), 1.0 / config.n() as f64)).collect();
        self.distance_weighted(&weighted, eq)
    }

    /// Distance for a weighted empirical measure.
    pub fn distance_weighted(&self, atoms: &[(Vec<f64>, f64)], eq: &EquilibriumSolution) -> f64 {
        let g = eq.grid();
        let vol = g.cell_volume();
        let cells: Vec<(Vec<f64>, f64)> = eq.density.rows().filter(|(_, m)| *m > 0.0).map(|(x, m)| (x, m * vol)).collect();
        self.functions
            .iter()
            .map(|f| {
                let a: f64 = atoms.iter().map(|(x, w)| w * f.eval(x)).sum();
                let b: f64 = cells.iter().map(|(x, w)| w * f.eval(x)).sum();
                (a - b).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Bounded-Lipschitz distance between `(1/n) Σ δ_{x_i}` and `μ₀` over the fixed dictionary.
pub fn empirical_distance(config: &PointConfiguration, eq: &EquilibriumSolution) -> f64 {
    BlDictionary::new(config.dim).distance(config, eq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    Quadrature,
    Thermo,
}

/// `log Z_{n,β}` on the line.
///
/// `Quadrature` integrates over `x₁ < … < x_n` (times `n!`) in coordinates `x₁` and the
/// gaps, with double-exponential rules that absorb the `|x_i - x_j|^β` endpoint behaviour.
/// `Thermo` integrates `∂_λ log Z_λ = -(β/2) E_λ[Σ_{i≠j} g]` over the interaction
/// coupling `λ ∈ [0, 1]` from the independent reference `λ = 0`.
pub fn log_partition_tiny(n: usize, beta: f64, spec: &PotentialSpec, method: PartitionMethod, seed: u64) -> Result<f64> {
    if spec.dim != 1 {
        return Err(LabError::Capability("tiny partition functions are computed on the line".into()));
    }
    if !(beta > 0.0) {
        return Err(LabError::Domain(format!("β must be positive, got {beta}")));
    }
    spec.validate()?;
    match method {
        PartitionMethod::Quadrature => {
            if !(1..=3).contains(&n) {
                return Err(LabError::Capability(format!("quadrature supports n ≤ 3, got n = {n}")));
            }
            let coarse = ordered_quadrature(n, beta, spec, 0.05);
            let fine = ordered_quadrature(n, beta, spec, 0.025);
            if (fine - coarse).abs() > 1e-7 * fine.abs().max(1.0) {
                return Err(LabError::NoConvergence {
                    method: "double-exponential quadrature",
                    iterations: 2,
                    residual: (fine - coarse).abs(),
                });
            }
            Ok(fine)
        }
        PartitionMethod::Thermo => {
            if !(1..=8).contains(&n) {
                return Err(LabError::Capability(format!("thermodynamic integration supports n ≤ 8, got n = {n}")));
            }
            thermodynamic_integration(n, beta, spec, seed)
        }
    }
}

fn ordered_quadrature(n: usize, beta: f64, spec: &PotentialSpec, step: f64) -> f64 {
    let nf = n as f64;
    let scale = 1.0 / (beta * nf).sqrt();
    let line: Vec<(f64, f64)> = real_line_nodes(step, 4.0).into_iter().map(|(x, w)| (x * scale, w * scale)).collect();
    let half: Vec<(f64, f64)> = half_line_nodes(step, 4.0).into_iter().map(|(x, w)| (x * scale, w * scale)).collect();
    let log_weight = |xs: &[f64]| -> f64 {
        let mut s = 0.0;
        for (i, &a) in xs.iter().enumerate() {
            s -= 0.5 * beta * nf * spec.value(&[a]);
            for &b in &xs[i + 1..] {
                s += beta * (a - b).abs().ln();
            }
        }
        s
    };
    // log-sum-exp accumulation
    let mut terms: Vec<f64> = Vec::new();
    match n {
        1 => {
            for &(x, w) in &line {
                terms.push(w.ln() + log_weight(&[x]));
            }
        }
        2 => {
            for &(x, w) in &line {
                for &(t, v) in &half {
                    terms.push((w * v).ln() + log_weight(&[x, x + t]));
                }
            }
        }
        _ => {
            for &(x, w) in &line {
                for &(t, v) in &half {
                    for &(s, u) in &half {
                        terms.push((w * v * u).ln() + log_weight(&[x, x + t, x + t + s]));
                    }
                }
            }
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    max + sum.ln() + factorial.ln()
}

fn thermodynamic_integration(n: usize, beta: f64, spec: &PotentialSpec, seed: u64) -> Result<f64> {
    let nf = n as f64;
    // reference: independent points with density ∝ exp(-(β/2) n V)
    let scale = 1.0 / (beta * nf).sqrt();
    let one: f64 = real_line_nodes(0.05, 4.0)
        .into_iter()
        .map(|(x, w)| w * scale * (-0.5 * beta * nf * spec.value(&[x * scale])).exp())
        .sum();
    let reference = nf * one.ln();
    let nodes = gauss_legendre_on(12, 0.0, 1.0);
    let mut integral = 0.0;
    for (k, (lambda, w)) in nodes.iter().enumerate() {
        let gibbs = GibbsSpec {
            n,
            beta,
            potential: spec.clone(),
            sigma: 2.0 * scale,
            sweeps: 400_000,
            burn_in: 2_000,
            thin: 1,
            seed,
            tune: true,
        };
        let chain = run_chain(&gibbs, k as u64, *lambda)?;
        let mean_interaction: f64 = chain
            .snapshots
            .iter()
            .map(|s| {
                let mut e = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        e -= 2.0 * (s.points[i][0] - s.points[j][0]).abs().ln();
                    }
                }
                e
            })
            .sum::<f64>()
            / chain.snapshots.len() as f64;
        integral += w * mean_interaction;
    }
    Ok(reference - 0.5 * beta * integral)
}
