//! Distance-based methods sharing the squared kernel distance to the nearest added point.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{argmax_by, Selector};
use crate::error::Result;
use crate::kernels::Kernel;

/// Squared distances below this are treated as zero mass when sampling.
const MASS_FLOOR: f64 = 1e-30;
/// Relative threshold (to the largest diagonal) below which distances count as zero.
const DIST_TOL: f64 = 1e-12;

pub enum DistanceRule {
    MaxDist,
    KMeansPP(ChaCha8Rng),
    Lcmd,
}

/// `c` over candidates; `d` and cluster centers over pool positions.
pub struct DistanceState {
    kernel: Kernel,
    rule: DistanceRule,
    n_mode: usize,
    c: Array1<f64>,
    d: Array1<f64>,
    centers: Vec<usize>,
    added: usize,
    tol: f64,
}

impl DistanceState {
    /// `kernel` must already be restricted to the candidates; the first `n_mode` are training points.
    pub fn new(kernel: Kernel, n_mode: usize, rule: DistanceRule) -> Self {
        let c = kernel.diag();
        let n_pool = c.len() - n_mode;
        let cmax = c.iter().cloned().fold(0.0, f64::max);
        Self {
            kernel,
            rule,
            n_mode,
            c,
            d: Array1::from_elem(n_pool, f64::INFINITY),
            centers: vec![usize::MAX; n_pool],
            added: 0,
            tol: DIST_TOL * cmax,
        }
    }

    /// Squared distance of each pool point to the nearest added point.
    pub fn distances(&self) -> &Array1<f64> {
        &self.d
    }

    /// Candidate position of each pool point's nearest added point.
    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    fn first_pick(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        match &mut self.rule {
            DistanceRule::KMeansPP(rng) => {
                let free: Vec<usize> = (0..available.len()).filter(|&i| available[i]).collect();
                if free.is_empty() {
                    return None;
                }
                Some((free[rng.random_range(0..free.len())], 0.0))
            }
            _ => argmax_by(available, |i| self.c[i]),
        }
    }

    fn pool_available(&self, available: &[bool]) -> Vec<bool> {
        available[self.n_mode..].to_vec()
    }

    fn lcmd_pick(&self, avail: &[bool]) -> Option<(usize, f64)> {
        let mut sizes = vec![0.0; self.c.len()];
        for p in (0..avail.len()).filter(|&p| avail[p]) {
            sizes[self.centers[p]] += self.d[p];
        }
        let s_max = sizes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        argmax_by(avail, |p| if sizes[self.centers[p]] == s_max { self.d[p] } else { f64::NAN })
    }

    fn sample(rng: &mut ChaCha8Rng, d: &Array1<f64>, avail: &[bool]) -> Option<(usize, f64)> {
        let mass = |p: usize| if avail[p] && d[p] >= MASS_FLOOR { d[p] } else { 0.0 };
        let total: f64 = (0..avail.len()).map(mass).sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for p in 0..avail.len() {
            let m = mass(p);
            if m > 0.0 {
                acc += m;
                last = Some(p);
                if target < acc {
                    return Some((p, d[p]));
                }
            }
        }
        last.map(|p| (p, d[p]))
    }
}

impl Selector for DistanceState {
    fn add(&mut self, x: usize) -> Result<()> {
        let col = self.kernel.column(x);
        let cx = self.c[x];
        let lcmd = matches!(self.rule, DistanceRule::Lcmd);
        for p in 0..self.d.len() {
            let q = self.n_mode + p;
            let dt = cx + self.c[q] - 2.0 * col[q];
            if lcmd && !(self.d[p] <= dt) {
                self.centers[p] = x;
            }
            if dt < self.d[p] {
                self.d[p] = dt;
            }
        }
        self.added += 1;
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        if self.added == 0 {
            return self.first_pick(available);
        }
        let avail = self.pool_available(available);
        let tol = self.tol;
        let pick = match &mut self.rule {
            DistanceRule::MaxDist => argmax_by(&avail, |p| self.d[p]),
            DistanceRule::Lcmd => self.lcmd_pick(&avail),
            DistanceRule::KMeansPP(rng) => {
                let d = self.d.mapv(|v| if v > tol { v } else { 0.0 });
                DistanceState::sample(rng, &d, &avail)
            }
        };
        pick.filter(|&(_, d)| d > tol).map(|(p, d)| (p + self.n_mode, d))
    }
}
