//! Confining potentials `V`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `|x|²`
    Quadratic,
    /// `Σ_k w_k x_k²`
    Anisotropic { weights: Vec<f64> },
    /// `Σ_k c_k |x|^k`
    Radial { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: PotentialKind,
}

impl PotentialSpec {
    pub fn quadratic(dim: usize) -> Self {
        Self { dim, kind: PotentialKind::Quadratic }
    }

    pub fn new(dim: usize, kind: PotentialKind) -> Result<Self> {
        let spec = Self { dim, kind };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the growth condition `V/2 + g → +∞` and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(LabError::Domain("dimension must be at least 1".into()));
        }
        match &self.kind {
            PotentialKind::Quadratic => Ok(()),
            PotentialKind::Anisotropic { weights } => {
                if weights.len() != self.dim {
                    return Err(LabError::Domain(format!(
                        "{} weights for dimension {}",
                        weights.len(),
                        self.dim
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(LabError::Domain("anisotropic weights must be positive".into()));
                }
                Ok(())
            }
            PotentialKind::Radial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(LabError::Domain("radial coefficients must be finite".into()));
                }
                match coeffs.iter().rposition(|&c| c != 0.0) {
                    Some(k) if k >= 1 && coeffs[k] > 0.0 => Ok(()),
                    _ => Err(LabError::Domain(
                        "radial potential must grow: leading coefficient of degree ≥ 1 must be positive"
                            .into(),
                    )),
                }
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => x.iter().map(|v| v * v).sum(),
            PotentialKind::Anisotropic { weights } => {
                x.iter().zip(weights).map(|(v, w)| w * v * v).sum()
            }
            PotentialKind::Radial { coeffs } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            PotentialKind::Quadratic => x.iter().map(|v| 2.0 * v).collect(),
            PotentialKind::Anisotropic { weights } => {
                x.iter().zip(weights).map(|(v, w)| 2.0 * w * v).collect()
            }
            PotentialKind::Radial { coeffs } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    return vec![0.0; x.len()];
                }
                let dv: f64 = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| k as f64 * c * r.powi(k as i32 - 1))
                    .sum();
                x.iter().map(|v| dv * v / r).collect()
            }
        }
    }

    /// `ΔV`; for radial terms `|x|^k` this is `k (k + d - 2) |x|^{k-2}`.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => 2.0 * self.dim as f64,
            PotentialKind::Anisotropic { weights } => 2.0 * weights.iter().sum::<f64>(),
            PotentialKind::Radial { coeffs } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let d = self.dim as f64;
                coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| {
                        let k = k as f64;
                        let coef = k * (k + d - 2.0);
                        if coef == 0.0 {
                            0.0
                        } else {
                            c * coef * r.powf(k - 2.0)
                        }
                    })
                    .sum()
            }
        }
    }

    /// Lower bound of `V` on a set of sample points; errors if any sample is not finite.
    pub fn check_bounded_below(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for x in samples {
            let v = self.value(x);
            if !v.is_finite() {
                return Err(LabError::Domain(format!("potential not finite at {x:?}")));
            }
            lo = lo.min(v);
        }
        Ok(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn validation() {
        assert!(PotentialSpec::new(2, PotentialKind::Radial { coeffs: vec![0.0, 0.0, -1.0] }).is_err());
        assert!(PotentialSpec::new(2, PotentialKind::Anisotropic { weights: vec![1.0] }).is_err());
        assert!(PotentialSpec::new(2, PotentialKind::Radial { coeffs: vec![1.0, 0.0, 1.0] }).is_ok());
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(x in -2.0f64..2.0, y in 0.1f64..2.0, z in -2.0f64..2.0) {
            let specs = [
                PotentialSpec::quadratic(3),
                PotentialSpec::new(3, PotentialKind::Anisotropic { weights: vec![1.5, 1.0, 0.5] }).unwrap(),
                PotentialSpec::new(3, PotentialKind::Radial { coeffs: vec![0.0, 0.3, 1.0, 0.0, 0.25] }).unwrap(),
            ];
            let p = [x, y, z];
            let e = 1e-4;
            for s in &specs {
                let g = s.gradient(&p);
                let mut lap = 0.0;
                for k in 0..3 {
                    let mut a = p;
                    let mut b = p;
                    a[k] += e;
                    b[k] -= e;
                    let fd = (s.value(&a) - s.value(&b)) / (2.0 * e);
                    prop_assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
                    lap += (s.value(&a) - 2.0 * s.value(&p) + s.value(&b)) / (e * e);
                }
                prop_assert!((lap - s.laplacian(&p)).abs() < 1e-3 * (1.0 + lap.abs()));
            }
        }
    }

    #[test]
    fn quadratic_values() {
        let v = PotentialSpec::quadratic(2);
        assert_relative_eq!(v.value(&[1.0, -1.0]), 2.0);
        assert_relative_eq!(v.laplacian(&[0.3, 0.2]), 4.0);
    }
}
