//! Five-point (2·d-point) elliptic problems `-Δu + σu = f` with Dirichlet data, solved by
//! (projected) successive over-relaxation. Rectangles in any dimension; the disk uses
//! Shortley–Weller arms at the curved boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Centering, Grid, GridField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// The full node grid; its outer layer carries the Dirichlet data.
    Rectangle,
    Disk { center: [f64; 2], radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `-Δu`
    Laplace,
    /// `-Δu + u`
    Screened,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Unknown,
    /// Fixed Dirichlet value (rectangle edge, or disk node within 1% of a cell of the circle).
    Fixed,
    Exterior,
}

#[derive(Debug, Clone)]
struct Row {
    node: usize,
    diag: f64,
    neighbors: Vec<(usize, f64)>,
    /// Contribution of Dirichlet data at cut arms.
    boundary: f64,
}

/// Discretized operator on a node grid.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub grid: Grid,
    pub kinds: Vec<NodeKind>,
    /// Dirichlet values on fixed nodes (zero elsewhere).
    pub fixed: Vec<f64>,
    rows: Vec<Row>,
    length_scale: f64,
}

const CUT_THRESHOLD: f64 = 1e-2;

impl Stencil {
    pub fn new(
        grid: &Grid,
        domain: &Domain,
        mode: Mode,
        boundary: &dyn Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        if grid.centering != Centering::Node {
            return Err(LabError::Domain("elliptic solves need a node grid".into()));
        }
        let h = grid.spacing;
        let h2 = h * h;
        let sigma = match mode {
            Mode::Laplace => 0.0,
            Mode::Screened => 1.0,
        };
        let n = grid.len();
        let mut kinds = vec![NodeKind::Unknown; n];
        let mut fixed = vec![0.0; n];
        let mut rows = Vec::new();
        let length_scale;
        match domain {
            Domain::Rectangle => {
                for f in 0..n {
                    if grid.on_boundary(f) {
                        kinds[f] = NodeKind::Fixed;
                        fixed[f] = boundary(&grid.point(f));
                    }
                }
                let mut stride = 1;
                let mut strides = Vec::new();
                for &s in &grid.shape {
                    strides.push(stride);
                    stride *= s;
                }
                for f in 0..n {
                    if kinds[f] != NodeKind::Unknown {
                        continue;
                    }
                    let mut row = Row {
                        node: f,
                        diag: 2.0 * grid.dim() as f64 / h2 + sigma,
                        neighbors: Vec::with_capacity(2 * grid.dim()),
                        boundary: 0.0,
                    };
                    for &s in &strides {
                        for nb in [f - s, f + s] {
                            if kinds[nb] == NodeKind::Fixed {
                                row.boundary += fixed[nb] / h2;
                            } else {
                                row.neighbors.push((nb, 1.0 / h2));
                            }
                        }
                    }
                    rows.push(row);
                }
                length_scale = grid
                    .shape
                    .iter()
                    .map(|&s| (s - 1) as f64 * h)
                    .fold(0.0, f64::max);
            }
            Domain::Disk { center, radius } => {
                if grid.dim() != 2 {
                    return Err(LabError::Capability("disk domains are planar".into()));
                }
                let r2 = radius * radius;
                let inside = |p: &[f64]| {
                    let dx = p[0] - center[0];
                    let dy = p[1] - center[1];
                    dx * dx + dy * dy
                };
                for f in 0..n {
                    let p = grid.point(f);
                    let d2 = inside(&p);
                    if d2 >= r2 {
                        kinds[f] = NodeKind::Exterior;
                    } else if radius - d2.sqrt() < CUT_THRESHOLD * h {
                        kinds[f] = NodeKind::Fixed;
                        let r = d2.sqrt().max(1e-300);
                        let proj = [
                            center[0] + (p[0] - center[0]) * radius / r,
                            center[1] + (p[1] - center[1]) * radius / r,
                        ];
                        fixed[f] = boundary(&proj);
                    } else if grid.on_boundary(f) {
                        return Err(LabError::Domain("disk does not fit inside the grid".into()));
                    }
                }
                let nx = grid.shape[0];
                for f in 0..n {
                    if kinds[f] != NodeKind::Unknown {
                        continue;
                    }
                    let p = grid.point(f);
                    let mut row = Row { node: f, diag: sigma, neighbors: Vec::with_capacity(4), boundary: 0.0 };
                    for (axis, stride) in [(0usize, 1usize), (1, nx)] {
                        // arm lengths and their endpoints
                        let mut arms = [(h, f - stride, None::<f64>), (h, f + stride, None)];
                        for (side, arm) in arms.iter_mut().enumerate() {
                            let sign = if side == 0 { -1.0 } else { 1.0 };
                            if kinds[arm.1] == NodeKind::Exterior {
                                // intersect p + t·sign·e_axis with the circle
                                let a = p[axis] - center[axis];
                                let b = p[1 - axis] - center[1 - axis];
                                let t = -sign * a + (r2 - b * b).sqrt();
                                let mut q = [p[0], p[1]];
                                q[axis] += sign * t;
                                arm.0 = t.max(CUT_THRESHOLD * h);
                                arm.2 = Some(boundary(&q));
                            }
                        }
                        let (hm, hp) = (arms[0].0, arms[1].0);
                        let am = 2.0 / (hm * (hm + hp));
                        let ap = 2.0 / (hp * (hm + hp));
                        row.diag += am + ap;
                        for ((_, nb, bval), a) in arms.iter().zip([am, ap]) {
                            match bval {
                                Some(v) => row.boundary += a * v,
                                None if kinds[*nb] == NodeKind::Fixed => row.boundary += a * fixed[*nb],
                                None => row.neighbors.push((*nb, a)),
                            }
                        }
                    }
                    rows.push(row);
                }
                length_scale = 2.0 * radius;
            }
        }
        Ok(Self { grid: grid.clone(), kinds, fixed, rows, length_scale })
    }

    /// Near-optimal SOR factor for the model problem at this resolution.
    pub fn optimal_omega(&self) -> f64 {
        2.0 / (1.0 + (PI * self.grid.spacing / self.length_scale).sin())
    }

    /// Residual `(A u - f)_i` at an unknown node.
    #[inline]
    fn row_residual(row: &Row, u: &[f64], f: f64) -> f64 {
        let mut s = row.diag * u[row.node] - row.boundary - f;
        for &(j, a) in &row.neighbors {
            s -= a * u[j];
        }
        s
    }

    /// `(A u - f)` on unknown nodes, zero elsewhere.
    pub fn residual(&self, u: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; u.len()];
        for row in &self.rows {
            r[row.node] = Self::row_residual(row, u, rhs[row.node]);
        }
        r
    }

    fn initial(&self, obstacle: Option<&[f64]>) -> Vec<f64> {
        let mut u = self.fixed.clone();
        for row in &self.rows {
            let i = row.node;
            u[i] = match obstacle {
                Some(psi) => psi[i].max(0.0),
                None => 0.0,
            };
        }
        u
    }

    /// Complementarity residual `max |min(u - ψ, A u - f)|` (plain residual without obstacle).
    pub fn complementarity(&self, u: &[f64], rhs: &[f64], obstacle: Option<&[f64]>) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let r = Self::row_residual(row, u, rhs[row.node]);
            let c = match obstacle {
                Some(psi) => (u[row.node] - psi[row.node]).min(r),
                None => r,
            };
            worst = worst.max(c.abs());
        }
        worst
    }

    /// Projected SOR for `A u = f` subject to `u ≥ ψ`; lexicographic sweeps.
    pub fn solve(
        &self,
        rhs: &[f64],
        obstacle: Option<&[f64]>,
        omega: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let method = if obstacle.is_some() { "projected SOR" } else { "SOR" };
        let mut u = self.initial(obstacle);
        let mut last = f64::INFINITY;
        let mut increases = 0;
        for sweep in 1..=max_sweeps {
            for row in &self.rows {
                let i = row.node;
                let mut s = row.boundary + rhs[i];
                for &(j, a) in &row.neighbors {
                    s += a * u[j];
                }
                let gs = s / row.diag;
                let mut v = u[i] + omega * (gs - u[i]);
                if let Some(psi) = obstacle {
                    v = v.max(psi[i]);
                }
                u[i] = v;
            }
            if sweep % 10 == 0 || sweep == max_sweeps {
                let res = self.complementarity(&u, rhs, obstacle);
                if !res.is_finite() {
                    return Err(LabError::Divergence { method, sweeps: sweep, residual: res });
                }
                if res <= tol {
                    return Ok((u, sweep));
                }
                if res > last {
                    increases += 10;
                    if increases >= 100 {
                        return Err(LabError::Divergence { method, sweeps: increases, residual: res });
                    }
                } else {
                    increases = 0;
                }
                last = res;
            }
        }
        Err(LabError::NoConvergence {
            method,
            iterations: max_sweeps,
            residual: self.complementarity(&u, rhs, obstacle),
        })
    }

    pub fn unknown_count(&self) -> usize {
        self.rows.len()
    }
}

/// Obstacle problem `min ∫|∇h|² (+ h²)` over `h ≥ ψ` with Dirichlet data on the rectangle
/// edges of the obstacle's node grid, by projected SOR. Complementarity residual ≤ 1e-8.
pub fn solve_obstacle_psor(
    obstacle: &GridField,
    boundary: &dyn Fn(&[f64]) -> f64,
    mode: Mode,
) -> Result<GridField> {
    let stencil = Stencil::new(&obstacle.grid, &Domain::Rectangle, mode, boundary)?;
    let rhs = vec![0.0; obstacle.values.len()];
    let psi: Vec<f64> = obstacle
        .values
        .iter()
        .map(|&v| if v.is_nan() { f64::NEG_INFINITY } else { v })
        .collect();
    let active = psi.iter().any(|v| v.is_finite());
    let omega = stencil.optimal_omega();
    let (u, _) = stencil.solve(&rhs, if active { Some(&psi) } else { None }, omega, 1e-8, 2_000_000)?;
    GridField::new(obstacle.grid.clone(), u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inactive_obstacle_gives_zero() {
        let g = Grid::nodes(&[-1.0, -1.0], &[1.0, 1.0], 1.0 / 16.0).unwrap();
        let psi = GridField::from_fn(g, |_| -1.0);
        let h = solve_obstacle_psor(&psi, &|_| 0.0, Mode::Laplace).unwrap();
        assert!(h.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn disabled_obstacle_screened_is_linear_solve() {
        let g = Grid::nodes(&[-1.0, -1.0], &[1.0, 1.0], 1.0 / 32.0).unwrap();
        let psi = GridField::from_fn(g.clone(), |_| f64::NEG_INFINITY);
        let h = solve_obstacle_psor(&psi, &|_| 1.0, Mode::Screened).unwrap();
        let st = Stencil::new(&g, &Domain::Rectangle, Mode::Screened, &|_| 1.0).unwrap();
        let rhs = vec![0.0; g.len()];
        assert!(st.complementarity(&h.values, &rhs, None) < 1e-8);
        let centre = h.interpolate(&[0.0, 0.0]);
        assert!(centre > 0.0 && centre < 1.0);
    }

    #[test]
    fn harmonic_quadratic_is_exact() {
        // x² - y² is reproduced exactly by the five-point Laplacian.
        let g = Grid::nodes(&[0.0, 0.0], &[1.0, 2.0], 0.1).unwrap();
        let st = Stencil::new(&g, &Domain::Rectangle, Mode::Laplace, &|p| p[0] * p[0] - p[1] * p[1]).unwrap();
        let rhs = vec![0.0; g.len()];
        let (u, _) = st.solve(&rhs, None, st.optimal_omega(), 1e-12, 100_000).unwrap();
        for (f, v) in u.iter().enumerate() {
            let p = g.point(f);
            assert_relative_eq!(*v, p[0] * p[0] - p[1] * p[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn disk_shortley_weller_is_second_order() {
        // -Δu = 4 on the unit disk, u = 0 on the circle: u = 1 - r².
        let mut errs = Vec::new();
        for &h in &[1.0 / 16.0, 1.0 / 32.0] {
            let g = Grid::nodes(&[-1.25, -1.25], &[1.25, 1.25], h).unwrap();
            let dom = Domain::Disk { center: [0.0, 0.0], radius: 1.0 };
            let st = Stencil::new(&g, &dom, Mode::Laplace, &|_| 0.0).unwrap();
            let rhs = vec![4.0; g.len()];
            let (u, _) = st.solve(&rhs, None, st.optimal_omega(), 1e-10, 100_000).unwrap();
            let mut err: f64 = 0.0;
            for (f, v) in u.iter().enumerate() {
                if st.kinds[f] == NodeKind::Unknown {
                    let p = g.point(f);
                    err = err.max((v - (1.0 - p[0] * p[0] - p[1] * p[1])).abs());
                }
            }
            errs.push(err);
        }
        // quadratic solutions are exact for Shortley–Weller as well
        assert!(errs[0] < 1e-8 && errs[1] < 1e-8, "{errs:?}");
    }

    #[test]
    fn divergence_is_reported() {
        let g = Grid::nodes(&[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        let st = Stencil::new(&g, &Domain::Rectangle, Mode::Laplace, &|_| 1.0).unwrap();
        let rhs = vec![0.0; g.len()];
        let err = st.solve(&rhs, None, 2.5, 1e-12, 100_000).unwrap_err();
        assert!(matches!(err, LabError::Divergence { .. }));
    }
}
