//! Frank-Wolfe approximation of the candidate kernel mean embedding.
//!
//! Points with a zero feature norm cannot be normalized; they are never chosen
//! and adding one leaves the state unchanged.

use ndarray::{Array1, Array2, Axis};

use super::{argmax_by, Selector};
use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Largest candidate set for the dense kernel-space variant.
pub const FW_KERNEL_MAX: usize = 4096;

pub struct FwFeatures {
    normalized: Array2<f64>,
    norms: Array1<f64>,
    total: f64,
    mean: Array1<f64>,
    approx: Array1<f64>,
}

impl FwFeatures {
    pub fn new(phi: Array2<f64>) -> Self {
        let norms: Array1<f64> = phi.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let total = norms.sum();
        let mean = phi.sum_axis(Axis(0));
        let mut normalized = phi;
        for (mut row, &c) in normalized.rows_mut().into_iter().zip(&norms) {
            if c > 0.0 {
                row /= c;
            }
        }
        let approx = Array1::zeros(mean.len());
        Self { normalized, norms, total, mean, approx }
    }

    /// Current approximation of the embedding.
    pub fn approximation(&self) -> &Array1<f64> {
        &self.approx
    }
}

impl Selector for FwFeatures {
    fn add(&mut self, x: usize) -> Result<()> {
        if self.norms[x] == 0.0 {
            return Ok(());
        }
        let target = &self.normalized.row(x) * self.total;
        let dir = &target - &self.approx;
        let den = dir.dot(&dir);
        if den == 0.0 {
            return Ok(());
        }
        let gamma = dir.dot(&(&self.mean - &self.approx)) / den;
        self.approx = &self.approx * (1.0 - gamma) + &target * gamma;
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        let residual = &self.mean - &self.approx;
        let scores = self.normalized.dot(&residual);
        argmax_by(available, |i| if self.norms[i] > 0.0 { scores[i] } else { f64::NAN })
    }
}

pub struct FwKernel {
    gram: Array2<f64>,
    norms: Array1<f64>,
    total: f64,
    u: Array1<f64>,
    v: Array1<f64>,
    s: f64,
    t: f64,
}

impl FwKernel {
    pub fn new(kernel: &Kernel) -> Result<Self> {
        if kernel.len() > FW_KERNEL_MAX {
            return Err(Error::Unsupported(format!(
                "kernel-space Frank-Wolfe stores a dense Gram matrix; {} candidates exceed {FW_KERNEL_MAX}",
                kernel.len()
            )));
        }
        let gram = kernel.gram();
        let norms: Array1<f64> = gram.diag().mapv(|d| d.max(0.0).sqrt());
        let total = norms.sum();
        let u = gram.sum_axis(Axis(1));
        let v = Array1::zeros(u.len());
        Ok(Self { gram, norms, total, u, v, s: 0.0, t: 0.0 })
    }
}

impl Selector for FwKernel {
    fn add(&mut self, x: usize) -> Result<()> {
        let cx = self.norms[x];
        if cx == 0.0 {
            return Ok(());
        }
        let r = self.total;
        let q = r / cx;
        let den = r * r - 2.0 * q * self.v[x] + self.s;
        if den == 0.0 {
            return Ok(());
        }
        let gamma = (q * (self.u[x] - self.v[x]) + self.s - self.t) / den;
        let (vx, ux) = (self.v[x], self.u[x]);
        self.s = (1.0 - gamma).powi(2) * self.s + 2.0 * (1.0 - gamma) * gamma * q * vx + gamma * gamma * r * r;
        self.t = (1.0 - gamma) * self.t + gamma * q * ux;
        let row = self.gram.row(x);
        self.v.zip_mut_with(&row, |vi, &k| *vi = (1.0 - gamma) * *vi + gamma * q * k);
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        argmax_by(available, |i| {
            let c = self.norms[i];
            if c > 0.0 {
                (self.u[i] - self.v[i]) / c
            } else {
                f64::NAN
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::run_iterative;
    use ndarray::array;

    #[test]
    fn single_point_matches_target() {
        let phi = array![[3.0, 4.0]];
        let mut s = FwFeatures::new(phi);
        assert_eq!(run_iterative(&mut s, 0, 1, 1).unwrap().0, vec![0]);
        let a = s.approximation();
        assert!((a[0] - 3.0).abs() < 1e-12 && (a[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn heavier_cluster_first() {
        let phi = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.1], [0.0, 0.9]];
        let (picks, _) = run_iterative(&mut FwFeatures::new(phi), 0, 4, 1).unwrap();
        assert_ne!(picks[0], 0);
    }

    #[test]
    fn first_gamma_by_hand() {
        let phi = array![[1.0, 0.0], [1.0, 1.0]];
        let k = Kernel::from_features(phi);
        let mut s = FwKernel::new(&k).unwrap();
        let (r, c0, u0) = (s.total, s.norms[0], s.u[0]);
        let want = (r / c0 * u0) / (r * r);
        s.add(0).unwrap();
        assert!((s.t - want * r / c0 * u0).abs() < 1e-12);
    }

    #[test]
    fn zero_rows_are_never_chosen() {
        let phi = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        let (picks, _) = run_iterative(&mut FwFeatures::new(phi.clone()), 0, 3, 2).unwrap();
        assert!(!picks.contains(&0));
        let (picks, _) = run_iterative(&mut FwKernel::new(&Kernel::from_features(phi)).unwrap(), 0, 3, 2).unwrap();
        assert!(!picks.contains(&0));
    }
}
