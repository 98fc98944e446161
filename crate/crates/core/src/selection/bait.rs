//! BAIT: greedily minimize the summed posterior variance over train ∪ pool.

use ndarray::{Array1, Array2, ArrayView2};

use super::maxdet::{forward_update, rank_one};
use super::{argmax_by, iterate, Picks, Selector};
use crate::error::{Error, Result};

/// Posterior features `Φ`, variances `c`, second moment `Σ` of the current
/// train ∪ pool features, and `v[x] = φ_xᵀ Σ φ_x`.
pub struct BaitState {
    phi: Array2<f64>,
    c: Array1<f64>,
    sigma_mat: Array2<f64>,
    v: Array1<f64>,
    sigma2: f64,
}

/// Guard on `σ² - c[x]` below which a removal is not attempted.
const BACKWARD_GUARD: f64 = 1e-12;

impl BaitState {
    /// `phi_cand` are candidate features; `phi_tp` are the features of train ∪ pool.
    pub fn new(phi_cand: Array2<f64>, phi_tp: ArrayView2<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Unsupported("BAIT needs sigma2 > 0".into()));
        }
        if phi_tp.ncols() != phi_cand.ncols() {
            return Err(Error::Dimension { expected: phi_cand.ncols(), got: phi_tp.ncols() });
        }
        let sigma_mat = phi_tp.t().dot(&phi_tp);
        let c = phi_cand.rows().into_iter().map(|r| r.dot(&r)).collect();
        let v = quad_forms(&phi_cand, &sigma_mat);
        Ok(Self { phi: phi_cand, c, sigma_mat, v, sigma2 })
    }

    pub fn variance(&self) -> &Array1<f64> {
        &self.c
    }

    /// Predicted decrease of the objective when adding candidate `x`.
    pub fn gain(&self, x: usize) -> f64 {
        self.v[x] / (self.sigma2 + self.c[x])
    }

    /// Predicted increase of the objective when removing an added candidate `x`.
    pub fn loss(&self, x: usize) -> f64 {
        self.v[x] / (self.sigma2 - self.c[x])
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.phi
    }

    /// Inverse of [`Selector::add`] for a previously added candidate.
    pub fn remove(&mut self, x: usize) -> Result<()> {
        let gap = self.sigma2 - self.c[x];
        if !(gap > BACKWARD_GUARD) {
            return Err(Error::Numerical(format!("cannot remove candidate {x}: sigma2 - c = {gap:e}")));
        }
        let phi_x = self.phi.row(x).to_owned();
        let u = self.phi.dot(&phi_x);
        let w = self.sigma_mat.dot(&phi_x);
        let v_x = self.v[x];
        let g = gap.sqrt();
        let beta = 1.0 / (g * (g + self.sigma2.sqrt()));
        let inv_g2 = 1.0 / gap;
        let pw = self.phi.dot(&w);
        for ((vi, &ui), &pi) in self.v.iter_mut().zip(&u).zip(&pw) {
            *vi += 2.0 * inv_g2 * pi * ui + inv_g2 * inv_g2 * v_x * ui * ui;
        }
        rank_one(&mut self.sigma_mat, beta, &w, &phi_x);
        rank_one(&mut self.sigma_mat, beta, &phi_x, &w);
        rank_one(&mut self.sigma_mat, beta * beta * v_x, &phi_x, &phi_x);
        self.c.zip_mut_with(&u, |ci, &ui| *ci += inv_g2 * ui * ui);
        rank_one(&mut self.phi, beta, &u, &phi_x);
        Ok(())
    }

    fn next_backward(&self, batch: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &x) in batch.iter().enumerate() {
            let s = self.loss(x);
            if !s.is_nan() && best.is_none_or(|(_, b)| s < b) {
                best = Some((pos, s));
            }
        }
        best
    }
}

fn quad_forms(phi: &Array2<f64>, m: &Array2<f64>) -> Array1<f64> {
    let pm = phi.dot(m);
    pm.rows().into_iter().zip(phi.rows()).map(|(a, b)| a.dot(&b)).collect()
}

impl Selector for BaitState {
    fn add(&mut self, x: usize) -> Result<()> {
        let w = self.sigma_mat.dot(&self.phi.row(x));
        let pw = self.phi.dot(&w);
        let v_x = self.v[x];
        let step = forward_update(&mut self.phi, &mut self.c, x, self.sigma2);
        let inv_g2 = 1.0 / (step.gamma * step.gamma);
        for ((vi, &ui), &pi) in self.v.iter_mut().zip(&step.u).zip(&pw) {
            *vi += -2.0 * inv_g2 * pi * ui + inv_g2 * inv_g2 * v_x * ui * ui;
        }
        let beta = step.beta;
        rank_one(&mut self.sigma_mat, -beta, &w, &step.phi_x);
        rank_one(&mut self.sigma_mat, -beta, &step.phi_x, &w);
        rank_one(&mut self.sigma_mat, beta * beta * v_x, &step.phi_x, &step.phi_x);
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        argmax_by(available, |i| self.gain(i))
    }
}

/// `n_batch + n_extra` forward steps followed by removals down to `n_batch`.
pub(crate) fn forward_backward(state: &mut BaitState, n_mode: usize, n_cand: usize, n_batch: usize, n_extra: usize) -> Result<Picks> {
    let Picks { mut chosen, mut scores } = iterate(state, n_mode, n_cand, n_batch + n_extra)?;
    while chosen.len() > n_batch {
        let Some((pos, _)) = state.next_backward(&chosen) else { break };
        if state.sigma2 - state.c[chosen[pos]] <= BACKWARD_GUARD {
            break;
        }
        state.remove(chosen[pos])?;
        chosen.remove(pos);
        scores.remove(pos);
    }
    chosen.truncate(n_batch);
    scores.truncate(n_batch);
    Ok(Picks { chosen, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::run_iterative;
    use ndarray::array;

    #[test]
    fn single_pool_point() {
        let phi = array![[0.3, 0.4]];
        let mut s = BaitState::new(phi.clone(), phi.view(), 0.1).unwrap();
        assert_eq!(run_iterative(&mut s, 0, 1, 1).unwrap().0, vec![0]);
    }

    #[test]
    fn identical_points_tie_to_lowest() {
        let phi = array![[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]];
        let mut s = BaitState::new(phi.clone(), phi.view(), 0.1).unwrap();
        let g = (s.gain(1), s.gain(2));
        assert_eq!(g.0, g.1);
        let (picks, _) = run_iterative(&mut s, 0, 3, 1).unwrap();
        assert!(picks[0] == 0 || picks[0] == 1);
    }

    #[test]
    fn add_then_remove_restores_state() {
        let phi = array![[1.0, 0.2, -0.3], [0.4, 1.1, 0.0], [0.3, -0.2, 0.9], [0.5, 0.5, 0.5]];
        let mut s = BaitState::new(phi.clone(), phi.view(), 0.05).unwrap();
        let before = (s.phi.dot(&s.phi.t()), s.c.clone(), s.v.clone());
        s.add(2).unwrap();
        s.remove(2).unwrap();
        let after = s.phi.dot(&s.phi.t());
        assert!(after.iter().zip(before.0.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(s.c.iter().zip(&before.1).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(s.v.iter().zip(&before.2).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn no_extra_equals_forward_only() {
        let phi = array![[1.0, 0.2], [0.4, 1.1], [0.3, -0.2], [0.5, 0.5], [-0.7, 0.1]];
        let mut a = BaitState::new(phi.clone(), phi.view(), 0.05).unwrap();
        let mut b = BaitState::new(phi.clone(), phi.view(), 0.05).unwrap();
        let f = run_iterative(&mut a, 0, 5, 2).unwrap().0;
        let fb = forward_backward(&mut b, 0, 5, 2, 0).unwrap().chosen;
        assert_eq!(f, fb);
    }
}
