use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::Selector;
use crate::error::Result;

/// Pool order given by one seeded permutation.
pub struct RandomOrder {
    order: Vec<usize>,
    cursor: usize,
}

impl RandomOrder {
    pub fn new(n_mode: usize, n_cand: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (n_mode..n_cand).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0 }
    }
}

impl Selector for RandomOrder {
    fn add(&mut self, _: usize) -> Result<()> {
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        while let Some(&i) = self.order.get(self.cursor) {
            self.cursor += 1;
            if available[i] {
                return Some((i, 0.0));
            }
        }
        None
    }
}

/// Pool sorted once by descending kernel diagonal; ties keep index order.
pub struct MaxDiag {
    order: Vec<usize>,
    diag: Vec<f64>,
    cursor: usize,
}

impl MaxDiag {
    pub fn new(diag: ArrayView1<f64>, n_mode: usize) -> Self {
        let mut order: Vec<usize> = (n_mode..diag.len()).collect();
        order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
        Self { order, diag: diag.to_vec(), cursor: 0 }
    }
}

impl Selector for MaxDiag {
    fn add(&mut self, _: usize) -> Result<()> {
        Ok(())
    }

    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)> {
        while let Some(&i) = self.order.get(self.cursor) {
            self.cursor += 1;
            if available[i] {
                return Some((i, self.diag[i]));
            }
        }
        None
    }
}
