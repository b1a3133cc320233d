//! Block-Toeplitz products `y_i = Σ_j K(i - j) x_j` through zero-padded FFTs.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct ToeplitzConv {
    shape: Vec<usize>,
    padded: Vec<usize>,
    kernel_hat: Vec<Complex64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for ToeplitzConv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzConv").field("shape", &self.shape).finish()
    }
}

fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(shape) {
        *o = flat % n;
        flat /= n;
    }
}

impl ToeplitzConv {
    /// `kernel` receives the signed index offset `i - j`.
    pub fn new(shape: &[usize], kernel: impl Fn(&[i64]) -> f64) -> Self {
        let padded: Vec<usize> = shape.iter().map(|&n| 2 * n).collect();
        let total: usize = padded.iter().product();
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = padded.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = padded.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut data = vec![Complex64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; shape.len()];
        let mut off = vec![0i64; shape.len()];
        for (flat, slot) in data.iter_mut().enumerate() {
            unravel(flat, &padded, &mut idx);
            let mut valid = true;
            for k in 0..shape.len() {
                let n = shape[k];
                off[k] = if idx[k] < n {
                    idx[k] as i64
                } else if idx[k] > n {
                    idx[k] as i64 - 2 * n as i64
                } else {
                    valid = false;
                    0
                };
            }
            if valid {
                *slot = Complex64::new(kernel(&off), 0.0);
            }
        }
        let mut conv = Self { shape: shape.to_vec(), padded, kernel_hat: Vec::new(), forward, inverse };
        conv.transform(&mut data, false);
        conv.kernel_hat = data;
        conv
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let mut stride = 1;
        for (axis, &n) in self.padded.iter().enumerate() {
            let plan = if inverse { &self.inverse[axis] } else { &self.forward[axis] };
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = start + inner;
                    if stride == 1 {
                        plan.process_with_scratch(&mut data[base..base + n], &mut scratch);
                        continue;
                    }
                    for (k, l) in line.iter_mut().enumerate() {
                        *l = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, l) in line.iter().enumerate() {
                        data[base + k * stride] = *l;
                    }
                }
            }
            stride *= n;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.shape.len();
        let total: usize = self.padded.iter().product();
        let mut data = vec![Complex64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; d];
        for (flat, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            unravel(flat, &self.shape, &mut idx);
            let mut p = 0;
            for k in (0..d).rev() {
                p = p * self.padded[k] + idx[k];
            }
            data[p] = Complex64::new(v, 0.0);
        }
        self.transform(&mut data, false);
        for (a, b) in data.iter_mut().zip(&self.kernel_hat) {
            *a *= b;
        }
        self.transform(&mut data, true);
        let scale = 1.0 / total as f64;
        let mut out = vec![0.0; x.len()];
        for (flat, o) in out.iter_mut().enumerate() {
            unravel(flat, &self.shape, &mut idx);
            let mut p = 0;
            for k in (0..d).rev() {
                p = p * self.padded[k] + idx[k];
            }
            *o = data[p].re * scale;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(shape: &[usize], kernel: &dyn Fn(&[i64]) -> f64, x: &[f64]) -> Vec<f64> {
        let n: usize = shape.iter().product();
        let mut out = vec![0.0; n];
        let mut a = vec![0usize; shape.len()];
        let mut b = vec![0usize; shape.len()];
        for i in 0..n {
            unravel(i, shape, &mut a);
            for j in 0..n {
                unravel(j, shape, &mut b);
                let off: Vec<i64> = a.iter().zip(&b).map(|(p, q)| *p as i64 - *q as i64).collect();
                out[i] += kernel(&off) * x[j];
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_dense_product(
            d in 1usize..4,
            seed in proptest::collection::vec(-1.0f64..1.0, 60),
        ) {
            let shape: Vec<usize> = [5usize, 3, 4][..d].to_vec();
            let n: usize = shape.iter().product();
            let x: Vec<f64> = (0..n).map(|i| seed[i % seed.len()] * (1.0 + i as f64 * 0.01)).collect();
            let kernel = |o: &[i64]| {
                let r2: f64 = o.iter().map(|&v| (v * v) as f64).sum();
                1.0 / (1.0 + r2) + 0.1 * o[0] as f64
            };
            let conv = ToeplitzConv::new(&shape, kernel);
            let fast = conv.apply(&x);
            let slow = brute(&shape, &kernel, &x);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-11);
            }
        }
    }
}
