//! Greedy determinant maximization, in kernel space (partial pivoted Cholesky)
//! and in feature space (rank-one square-root updates of posterior features).

use ndarray::{s, Array1, Array2, Axis};

use super::{argmax_by, Selector};
use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Residual diagonal `c` of `K + σ²I` with Cholesky rows `B` for the added points.
pub struct MaxDetKernel {
    kernel: Kernel,
    sigma2: f64,
    c: Array1<f64>,
    rows: Array2<f64>,
    n_rows: usize,
}

impl MaxDetKernel {
    /// `kernel` must already be restricted to the candidates.
    pub fn new(kernel: Kernel, sigma2: f64, capacity: usize) -> Self {
        let c = kernel.diag() + sigma2;
        let rows = Array2::zeros((capacity.max(1), kernel.len()));
        Self { kernel, sigma2, c, rows, n_rows: 0 }
    }

    /// `k_post(x, x) + σ²` conditioned on the added points.
    pub fn residual(&self) -> &Array1<f64> {
        &self.c
    }
}

impl Selector for MaxDetKernel {
    fn add(&mut self, x: usize) -> Result<()> {
        let cx = self.c[x];
        if !(cx > 0.0) {
            return Err(Error::Numerical(format!(
                "residual variance {cx:e} at candidate {x}; the kernel is not positive definite enough, use sigma2 > 0"
            )));
        }
        let mut v = self.kernel.column(x);
        v[x] += self.sigma2;
        if self.n_rows > 0 {
            let b = self.rows.slice(s![..self.n_rows, ..]);
            v -= &b.t().dot(&b.column(x));
        }
        v /= cx.sqrt();
        self.c.zip_mut_with(&v, |c, &vi| *c -= vi * vi);
        if self.n_rows == self.rows.nrows() {
            let grown = Array2::zeros((self.rows.nrows(), self.rows.ncols()));
            self.rows.append(Axis(0), grown.view()).expect("matching widths");
        }
        self.rows.row_mut(self.n_rows).assign(&v);
        self.n_rows += 1;
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        argmax_by(available, |i| self.c[i]).filter(|&(_, c)| c > 0.0)
    }
}

/// Posterior features `Φ` and posterior variances `c` under noise `σ² > 0`.
pub struct MaxDetFeatures {
    phi: Array2<f64>,
    c: Array1<f64>,
    sigma2: f64,
}

impl MaxDetFeatures {
    pub fn new(phi: Array2<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Unsupported("feature-space selection needs sigma2 > 0".into()));
        }
        let c = phi.rows().into_iter().map(|r| r.dot(&r)).collect();
        Ok(Self { phi, c, sigma2 })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.phi
    }

    /// Posterior variance `k_post(x, x)` of each candidate.
    pub fn variance(&self) -> &Array1<f64> {
        &self.c
    }
}

/// `Φ ← Φ - β u φ_xᵀ` and `c ← c - u²/γ²`; shared with the BAIT state.
pub(crate) fn forward_update(phi: &mut Array2<f64>, c: &mut Array1<f64>, x: usize, sigma2: f64) -> ForwardStep {
    let phi_x = phi.row(x).to_owned();
    let u = phi.dot(&phi_x);
    let gamma = (sigma2 + c[x]).sqrt();
    let beta = 1.0 / (gamma * (gamma + sigma2.sqrt()));
    let inv_g2 = 1.0 / (gamma * gamma);
    c.zip_mut_with(&u, |ci, &ui| *ci -= inv_g2 * ui * ui);
    rank_one(phi, -beta, &u, &phi_x);
    ForwardStep { phi_x, u, gamma, beta }
}

pub(crate) struct ForwardStep {
    pub phi_x: Array1<f64>,
    pub u: Array1<f64>,
    pub gamma: f64,
    pub beta: f64,
}

/// `M += alpha · a bᵀ`.
pub(crate) fn rank_one(m: &mut Array2<f64>, alpha: f64, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        row.scaled_add(alpha * ai, b);
    }
}

impl Selector for MaxDetFeatures {
    fn add(&mut self, x: usize) -> Result<()> {
        forward_update(&mut self.phi, &mut self.c, x, self.sigma2);
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        argmax_by(available, |i| self.c[i]).filter(|&(_, c)| c > 0.0)
    }
}
