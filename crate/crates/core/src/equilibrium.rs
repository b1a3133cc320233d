//! Frostman equilibrium measures on a cell grid.
//!
//! The discrete problem minimizes `pᵀKp + Vᵀp` over cell masses `p ≥ 0`, `Σp = 1`, where
//! `K` holds cell-pair averages of the kernel. A primal–dual active set method fixes the
//! support; on a fixed support the KKT system is solved by preconditioned CG with FFT
//! Toeplitz products.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::conv::ToeplitzConv;
use crate::error::{LabError, Result};
use crate::grid::{Centering, Grid, GridField};
use crate::kernels::{cell_pair_average, KernelFamily, KernelSpec};
use crate::potential::PotentialSpec;

pub use crate::elliptic::{solve_obstacle_psor, Mode};

/// Offsets with `max |o_k| ≤ NEAR_CELLS` use exact cell-pair averages.
const NEAR_CELLS: i64 = 2;
const NEAR_ORDER: usize = 16;

/// `p ↦ K p`: potential (cell-averaged) generated by cell masses `p`.
#[derive(Debug)]
pub struct CellOperator {
    pub grid: Grid,
    pub kernel: KernelSpec,
    conv: ToeplitzConv,
}

impl CellOperator {
    pub fn new(grid: &Grid, kernel: &KernelSpec) -> Result<Self> {
        if grid.centering != Centering::Cell {
            return Err(LabError::Domain("equilibrium grids are cell-centred".into()));
        }
        if grid.dim() != kernel.dim {
            return Err(LabError::Domain("grid and kernel dimensions differ".into()));
        }
        if kernel.dim > 3 {
            return Err(LabError::Capability(format!("equilibrium in dimension {}", kernel.dim)));
        }
        let h = grid.spacing;
        let mut near: HashMap<Vec<i64>, f64> = HashMap::new();
        let d = grid.dim();
        let span = (NEAR_CELLS + 1) as usize;
        for flat in 0..span.pow(d as u32) {
            let mut rem = flat;
            let mut off = Vec::with_capacity(d);
            for _ in 0..d {
                off.push((rem % span) as i64);
                rem /= span;
            }
            let mut key = off.clone();
            key.sort_unstable();
            if near.contains_key(&key) {
                continue;
            }
            near.insert(key, cell_pair_average(&off, h, kernel, NEAR_ORDER)?);
        }
        let spec = *kernel;
        let conv = ToeplitzConv::new(&grid.shape, |off: &[i64]| {
            if off.iter().all(|o| o.abs() <= NEAR_CELLS) {
                let mut key: Vec<i64> = off.iter().map(|o| o.abs()).collect();
                key.sort_unstable();
                near[&key]
            } else {
                let r = off.iter().map(|&o| (o * o) as f64).sum::<f64>().sqrt() * h;
                spec.g(r)
            }
        });
        Ok(Self { grid: grid.clone(), kernel: *kernel, conv })
    }

    pub fn apply(&self, masses: &[f64]) -> Vec<f64> {
        self.conv.apply(masses)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub spacing: f64,
    pub max_active_set_iterations: usize,
    pub max_cg_iterations: usize,
    pub cg_tolerance: f64,
}

impl EquilibriumConfig {
    /// Box `[-2.5, 2.5]^d`.
    pub fn default_box(dim: usize, spacing: f64) -> Self {
        Self::on_box(vec![-2.5; dim], vec![2.5; dim], spacing)
    }

    pub fn on_box(lower: Vec<f64>, upper: Vec<f64>, spacing: f64) -> Self {
        Self {
            lower,
            upper,
            spacing,
            max_active_set_iterations: 200,
            max_cg_iterations: 4000,
            cg_tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub kernel: KernelSpec,
    pub potential: PotentialSpec,
    /// Density `μ₀` (cell mass divided by cell volume).
    pub density: GridField,
    /// `h^{μ₀} = g * μ₀`, cell-averaged.
    pub potential_field: GridField,
    pub c: f64,
    /// `ζ = h^{μ₀} + V/2 - c`
    pub zeta: GridField,
    pub support: Vec<bool>,
    /// Discrete `I(μ₀)`.
    pub energy: f64,
    pub iterations: usize,
}

impl EquilibriumSolution {
    pub fn grid(&self) -> &Grid {
        &self.density.grid
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid().cell_volume();
        self.density.values.iter().map(|m| m * vol).collect()
    }

    /// Radius of the ball with the volume of the support.
    pub fn support_radius_estimate(&self) -> f64 {
        let g = self.grid();
        let count = self.support.iter().filter(|&&s| s).count() as f64;
        let vol = count * g.cell_volume();
        match g.dim() {
            1 => vol / 2.0,
            2 => (vol / std::f64::consts::PI).sqrt(),
            3 => (vol * 3.0 / (4.0 * std::f64::consts::PI)).cbrt(),
            d => {
                let unit = std::f64::consts::PI.powf(d as f64 / 2.0)
                    / crate::special::gamma(d as f64 / 2.0 + 1.0);
                (vol / unit).powf(1.0 / d as f64)
            }
        }
    }

    /// Builds a solution from explicit fields, computing `ζ`, the support mask and
    /// the energy from them.
    pub fn from_fields(
        kernel: KernelSpec,
        potential: PotentialSpec,
        density: GridField,
        potential_field: GridField,
        c: f64,
    ) -> Result<Self> {
        if density.grid != potential_field.grid {
            return Err(LabError::Domain("density and potential grids differ".into()));
        }
        let grid = density.grid.clone();
        let vol = grid.cell_volume();
        let v: Vec<f64> = grid.points().iter().map(|x| potential.value(x)).collect();
        let zeta: Vec<f64> = potential_field
            .values
            .iter()
            .zip(&v)
            .map(|(h, v)| h + 0.5 * v - c)
            .collect();
        let energy = density
            .values
            .iter()
            .zip(potential_field.values.iter().zip(&v))
            .map(|(m, (h, v))| m * vol * (h + v))
            .sum();
        let support = support_mask(&density.values);
        Ok(Self {
            kernel,
            potential,
            zeta: GridField::new(grid, zeta)?,
            density,
            potential_field,
            c,
            support,
            energy,
            iterations: 0,
        })
    }

    /// Replaces the density, recomputing `h = K p` and `c = Σ p (h + V/2)`.
    pub fn with_density(&self, density: GridField) -> Result<Self> {
        let op = CellOperator::new(&density.grid, &self.kernel)?;
        let vol = density.grid.cell_volume();
        let p: Vec<f64> = density.values.iter().map(|m| m * vol).collect();
        let h = op.apply(&p);
        let v: Vec<f64> = density.grid.points().iter().map(|x| self.potential.value(x)).collect();
        let mass: f64 = p.iter().sum();
        let c = p.iter().zip(h.iter().zip(&v)).map(|(p, (h, v))| p * (h + 0.5 * v)).sum::<f64>() / mass;
        let hf = GridField::new(density.grid.clone(), h)?;
        Self::from_fields(self.kernel, self.potential.clone(), density, hf, c)
    }

    /// `ζ` at an arbitrary point by multilinear interpolation of the grid field.
    pub fn zeta_at(&self, x: &[f64]) -> f64 {
        self.zeta.interpolate(x)
    }
}

fn support_mask(density: &[f64]) -> Vec<bool> {
    let max = density.iter().copied().fold(0.0, f64::max);
    density.iter().map(|&m| m > 1e-6 * max).collect()
}

/// Symmetric positive definite operator on the active cells.
struct ReducedSystem<'a> {
    op: &'a CellOperator,
    active: &'a [usize],
    kappa: f64,
    /// `h^{d-2} / c_d` scaling of the Laplacian preconditioner, `None` in d = 1.
    precond_scale: Option<f64>,
    position: Vec<usize>,
}

impl ReducedSystem<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.op.grid.len()];
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = x[k];
        }
        let kp = self.op.apply(&full);
        let total: f64 = x.iter().sum();
        self.active.iter().map(|&i| kp[i] + self.kappa * total).collect()
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let Some(scale) = self.precond_scale else {
            return r.to_vec();
        };
        let grid = &self.op.grid;
        let two_d = 2.0 * grid.dim() as f64;
        self.active
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut s = two_d * r[k];
                for nb in grid.neighbors(i) {
                    let pos = self.position[nb];
                    if pos != usize::MAX {
                        s -= r[pos];
                    }
                }
                scale * s
            })
            .collect()
    }

    fn pcg(&self, rhs: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut x = x0.to_vec();
        let ax = self.apply(&x);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let bnorm = dot(rhs, rhs).sqrt().max(1e-300);
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..max_iter {
            let rnorm = dot(&r, &r).sqrt();
            if rnorm <= tol * bnorm {
                return Ok(x);
            }
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(LabError::LinearSolver(format!("non-positive curvature {pap:e} in CG")));
            }
            let alpha = rz / pap;
            for k in 0..x.len() {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..p.len() {
                p[k] = z[k] + beta * p[k];
            }
        }
        let rnorm = dot(&r, &r).sqrt();
        Err(LabError::NoConvergence { method: "preconditioned CG", iterations: max_iter, residual: rnorm / bnorm })
    }
}

/// Minimizes the discretized `I(μ) = ∬ g dμdμ + ∫ V dμ` over probability densities on the
/// cells of the configured box.
///
/// The active set is seeded from the support of the same problem on the grid of twice
/// the spacing when that grid still has at least 16 cells per axis.
pub fn solve_equilibrium_direct(
    spec: &PotentialSpec,
    config: &EquilibriumConfig,
) -> Result<EquilibriumSolution> {
    spec.validate()?;
    let grid = Grid::cells(&config.lower, &config.upper, config.spacing)?;
    if grid.dim() != spec.dim {
        return Err(LabError::Domain("box and potential dimensions differ".into()));
    }
    let seed = if grid.shape.iter().all(|&n| n % 2 == 0 && n >= 32) {
        let coarse_cfg = EquilibriumConfig { spacing: 2.0 * config.spacing, ..config.clone() };
        let coarse = solve_equilibrium_direct(spec, &coarse_cfg)?;
        let cg = coarse.grid();
        Some(
            (0..grid.len())
                .map(|f| {
                    let idx: Vec<usize> = grid.unravel(f).iter().map(|i| i / 2).collect();
                    coarse.support[cg.flat(&idx)]
                })
                .collect(),
        )
    } else {
        None
    };
    solve_on_grid(spec, config, grid, seed)
}

fn solve_on_grid(
    spec: &PotentialSpec,
    config: &EquilibriumConfig,
    grid: Grid,
    seed: Option<Vec<bool>>,
) -> Result<EquilibriumSolution> {
    let kernel = KernelSpec::new(spec.dim)?;
    let op = CellOperator::new(&grid, &kernel)?;
    let points = grid.points();
    let v: Vec<f64> = points.iter().map(|x| spec.value(x)).collect();
    spec.check_bounded_below(&points)?;
    let n = grid.len();
    let half_diag = config
        .lower
        .iter()
        .zip(&config.upper)
        .map(|(a, b)| 0.25 * (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let kappa = match kernel.family {
        KernelFamily::Logarithmic => (4.0 * half_diag).ln() + 1.0,
        KernelFamily::Power => 0.0,
    };
    let precond_scale = if kernel.dim >= 2 {
        Some(grid.spacing.powi(kernel.dim as i32 - 2) / kernel.c_d)
    } else {
        None
    };

    // without a seed: the lower quarter of V's range on the box
    let mut in_set: Vec<bool> = match seed {
        Some(s) => s,
        None => {
            let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
            let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.iter().map(|&x| x <= vmin + 0.25 * (vmax - vmin)).collect()
        }
    };

    let mut p = vec![0.0; n];
    let mut warm_a: HashMap<usize, f64> = HashMap::new();
    let mut warm_b: HashMap<usize, f64> = HashMap::new();
    let mut c = 0.0;
    let mut h = vec![0.0; n];
    let mut last_violation = f64::INFINITY;
    for iteration in 1..=config.max_active_set_iterations {
        let active: Vec<usize> = (0..n).filter(|&i| in_set[i]).collect();
        if active.is_empty() {
            return Err(LabError::NoConvergence {
                method: "active set",
                iterations: iteration,
                residual: f64::INFINITY,
            });
        }
        let mut position = vec![usize::MAX; n];
        for (k, &i) in active.iter().enumerate() {
            position[i] = k;
        }
        let sys = ReducedSystem { op: &op, active: &active, kappa, precond_scale, position };
        let ones = vec![1.0; active.len()];
        let half_v: Vec<f64> = active.iter().map(|&i| 0.5 * v[i]).collect();
        let a0: Vec<f64> = active.iter().map(|i| *warm_a.get(i).unwrap_or(&0.0)).collect();
        let b0: Vec<f64> = active.iter().map(|i| *warm_b.get(i).unwrap_or(&0.0)).collect();
        let a = sys.pcg(&ones, &a0, config.cg_tolerance, config.max_cg_iterations)?;
        let b = sys.pcg(&half_v, &b0, config.cg_tolerance, config.max_cg_iterations)?;
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let mu = (1.0 + sb) / sa;
        c = mu - kappa;
        warm_a = active.iter().copied().zip(a.iter().copied()).collect();
        warm_b = active.iter().copied().zip(b.iter().copied()).collect();
        p.iter_mut().for_each(|x| *x = 0.0);
        for (k, &i) in active.iter().enumerate() {
            p[i] = mu * a[k] - b[k];
        }
        h = op.apply(&p);
        let scale = c.abs().max(1.0);
        let tol_add = 1e-11 * scale;
        let mut changed = false;
        let mut violation: f64 = 0.0;
        for i in 0..n {
            let zeta = h[i] + 0.5 * v[i] - c;
            if in_set[i] {
                if p[i] < 0.0 {
                    in_set[i] = false;
                    changed = true;
                    violation = violation.max(-p[i]);
                }
            } else if zeta < -tol_add {
                in_set[i] = true;
                changed = true;
                violation = violation.max(-zeta);
            }
        }
        if !changed {
            let support = support_mask(&p);
            let reach = grid_reach(&grid, &config.lower, &config.upper, &support);
            if reach > 0.9 {
                return Err(LabError::BoxTooSmall { reach });
            }
            let vol = grid.cell_volume();
            let density: Vec<f64> = p.iter().map(|m| m / vol).collect();
            let zeta: Vec<f64> = h.iter().zip(&v).map(|(h, v)| h + 0.5 * v - c).collect();
            let energy = p.iter().zip(h.iter().zip(&v)).map(|(p, (h, v))| p * (h + v)).sum();
            return Ok(EquilibriumSolution {
                kernel,
                potential: spec.clone(),
                density: GridField::new(grid.clone(), density)?,
                potential_field: GridField::new(grid.clone(), h)?,
                c,
                zeta: GridField::new(grid, zeta)?,
                support,
                energy,
                iterations: iteration,
            });
        }
        last_violation = violation;
    }
    let _ = (&h, c);
    Err(LabError::NoConvergence {
        method: "active set",
        iterations: config.max_active_set_iterations,
        residual: last_violation,
    })
}

/// Largest `|x_k - centre_k| / half-width_k` over support cells (cell edges included).
fn grid_reach(grid: &Grid, lower: &[f64], upper: &[f64], support: &[bool]) -> f64 {
    let mut reach: f64 = 0.0;
    for (f, &s) in support.iter().enumerate() {
        if !s {
            continue;
        }
        let x = grid.point(f);
        for k in 0..grid.dim() {
            let mid = 0.5 * (lower[k] + upper[k]);
            let half = 0.5 * (upper[k] - lower[k]);
            reach = reach.max(((x[k] - mid).abs() + 0.5 * grid.spacing) / half);
        }
    }
    reach
}

/// `∬ g dμ dμ + ∫ V dμ` for a density on a cell grid, with exact in-cell diagonal terms.
pub fn mean_field_energy(density: &GridField, spec: &PotentialSpec) -> Result<f64> {
    let grid = &density.grid;
    if density.values.iter().any(|&m| m < -1e-12) {
        return Err(LabError::Domain("density has negative cells".into()));
    }
    let mass = density.integral();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(LabError::Domain(format!("total mass {mass} differs from 1")));
    }
    let kernel = KernelSpec::new(spec.dim)?;
    let op = CellOperator::new(grid, &kernel)?;
    let vol = grid.cell_volume();
    let p: Vec<f64> = density.values.iter().map(|m| m.max(0.0) * vol).collect();
    let h = op.apply(&p);
    Ok(p.iter()
        .enumerate()
        .map(|(i, pi)| pi * (h[i] + spec.value(&grid.point(i))))
        .sum())
}

/// `(max (c - h - V/2)₊ over the grid, max |h + V/2 - c| over the support)`.
pub fn euler_lagrange_residual(sol: &EquilibriumSolution) -> (f64, f64) {
    let mut below: f64 = 0.0;
    let mut on_support: f64 = 0.0;
    for (i, z) in sol.zeta.values.iter().enumerate() {
        below = below.max(-z);
        if sol.support[i] {
            on_support = on_support.max(z.abs());
        }
    }
    (below.max(0.0), on_support)
}
