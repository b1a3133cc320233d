//! Uniform rectangular grids in one to three dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Centering {
    /// Values live at cell centers `lower + (i + 1/2) h`.
    Cell,
    /// Values live at nodes `lower + i h`, boundary included.
    Node,
}

/// Uniform grid with equal spacing along every axis. Flat index has axis 0 fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub centering: Centering,
}

impl Grid {
    /// Cell-centered grid covering the box `[lower, upper]` with spacing `h`.
    pub fn cells(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        Self::build(lower, upper, h, Centering::Cell)
    }

    /// Node grid on `[lower, upper]` with spacing `h`, both ends included.
    pub fn nodes(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        Self::build(lower, upper, h, Centering::Node)
    }

    fn build(lower: &[f64], upper: &[f64], h: f64, centering: Centering) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(LabError::Domain("box bounds have mismatched dimensions".into()));
        }
        if !(h > 0.0) {
            return Err(LabError::Domain(format!("grid spacing must be positive, got {h}")));
        }
        let mut shape = Vec::with_capacity(lower.len());
        for (a, b) in lower.iter().zip(upper) {
            let steps = (b - a) / h;
            let n = steps.round();
            if n < 1.0 || (steps - n).abs() > 1e-9 * steps.max(1.0) {
                return Err(LabError::Domain(format!(
                    "box side {} is not a positive multiple of the spacing {h}",
                    b - a
                )));
            }
            shape.push(match centering {
                Centering::Cell => n as usize,
                Centering::Node => n as usize + 1,
            });
        }
        Ok(Self { lower: lower.to_vec(), shape, spacing: h, centering })
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Vec<f64> {
        let extra = match self.centering {
            Centering::Cell => 0,
            Centering::Node => 1,
        };
        self.lower
            .iter()
            .zip(&self.shape)
            .map(|(l, &n)| l + (n - extra) as f64 * self.spacing)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let offset = match self.centering {
            Centering::Cell => 0.5,
            Centering::Node => 0.0,
        };
        self.lower[axis] + (i as f64 + offset) * self.spacing
    }

    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for k in (0..self.dim()).rev() {
            f = f * self.shape[k] + idx[k];
        }
        f
    }

    #[inline]
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for &n in &self.shape {
            idx.push(flat % n);
            flat /= n;
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.coord(k, i))
            .collect()
    }

    /// All grid points, in flat order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|f| self.point(f)).collect()
    }

    /// Flat indices of the axis neighbours of `flat` (up to `2·dim`).
    pub fn neighbors(&self, flat: usize) -> impl Iterator<Item = usize> + '_ {
        let idx = self.unravel(flat);
        let mut stride = 1;
        let mut out = Vec::with_capacity(2 * self.dim());
        for (k, &n) in self.shape.iter().enumerate() {
            if idx[k] > 0 {
                out.push(flat - stride);
            }
            if idx[k] + 1 < n {
                out.push(flat + stride);
            }
            stride *= n;
        }
        out.into_iter()
    }

    /// True when the point is on the outermost layer of the grid.
    pub fn on_boundary(&self, flat: usize) -> bool {
        self.unravel(flat)
            .iter()
            .zip(&self.shape)
            .any(|(&i, &n)| i == 0 || i + 1 == n)
    }
}

/// Scalar field sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Domain(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Riemann sum `Σ v · h^d` (cell grids) or trapezoid rule (node grids).
    pub fn integral(&self) -> f64 {
        let vol = self.grid.cell_volume();
        match self.grid.centering {
            Centering::Cell => self.values.iter().sum::<f64>() * vol,
            Centering::Node => {
                let mut total = 0.0;
                for (f, v) in self.values.iter().enumerate() {
                    let w: f64 = self
                        .grid
                        .unravel(f)
                        .iter()
                        .zip(&self.grid.shape)
                        .map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
                        .product();
                    total += w * v;
                }
                total * vol
            }
        }
    }

    /// Multilinear interpolation; points outside the sample hull use the nearest edge values.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let offset = match g.centering {
            Centering::Cell => 0.5,
            Centering::Node => 0.0,
        };
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let n = g.shape[k];
            let t = ((x[k] - g.lower[k]) / g.spacing - offset).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n.saturating_sub(2));
            base[k] = i;
            frac[k] = if n > 1 { t - i as f64 } else { 0.0 };
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    if g.shape[k] > 1 {
                        idx[k] += 1;
                    }
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                total += w * self.values[g.flat(&idx)];
            }
        }
        total
    }

    /// Rows of `(coordinates, value)` in flat order.
    pub fn rows(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        self.values.iter().enumerate().map(move |(f, &v)| (self.grid.point(f), v))
    }
}
