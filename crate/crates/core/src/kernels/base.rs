//! Base kernels derived from inputs and from a trained network.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, NdFloat};

use super::{FeatureDim, Kernel, PairwiseKernel};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig, TrainedModel};

fn to_f64<F: NdFloat>(m: &Array2<F>) -> Array2<f64> {
    m.mapv(|v| v.to_f64().unwrap())
}

fn cast_input<F: NdFloat>(x: ArrayView2<f64>) -> Array2<F> {
    x.mapv(|v| F::from(v).unwrap())
}

/// `k(x, x') = <x, x'>`.
pub fn base_linear(x: ArrayView2<f64>) -> Kernel {
    Kernel::from_features(x.to_owned())
}

/// Gradient of the output with respect to the last layer's weights and bias.
pub fn base_last_layer<F: NdFloat>(model: &TrainedModel<F>, x: ArrayView2<f64>) -> Result<Kernel> {
    let feats = model.ll_features(cast_input::<F>(x).view())?;
    Ok(Kernel::from_features(to_f64(&feats)))
}

/// Finite-width tangent kernel, kept as a sum over layers of `k_in * k_out`.
///
/// The last layer has a single output with unit sensitivity, so it contributes
/// its input kernel alone.
pub fn base_grad<F: NdFloat>(model: &TrainedModel<F>, x: ArrayView2<f64>) -> Result<Kernel> {
    let factors = model.grad_factors(cast_input::<F>(x).view())?;
    let depth = factors.ins.len();
    let mut parts = Vec::with_capacity(depth);
    for (l, (a, b)) in factors.ins.iter().zip(&factors.outs).enumerate() {
        let k_in = Kernel::from_features(to_f64(a));
        if l + 1 == depth {
            parts.push(k_in);
        } else {
            parts.push(Kernel::product(k_in, Kernel::from_features(to_f64(b)))?);
        }
    }
    Kernel::sum(parts)
}

/// Infinite-width kernel of a randomly initialized ReLU network (bias terms omitted).
pub fn base_nngp(config: &ModelConfig, x: ArrayView2<f64>) -> Result<Kernel> {
    if config.activation != Activation::Relu {
        return Err(Error::Unsupported("the analytic NNGP is only available for ReLU".into()));
    }
    config.validate()?;
    if x.ncols() != config.input_dim() {
        return Err(Error::Dimension { expected: config.input_dim(), got: x.ncols() });
    }
    Ok(Kernel::from_evaluator(Arc::new(NngpEvaluator::new(x.to_owned(), config.sigma_w, config.depth()))))
}

#[derive(Debug, Clone)]
pub struct NngpEvaluator {
    x: Arc<Array2<f64>>,
    sigma_w2: f64,
    depth: usize,
}

/// `E[relu(u) relu(v)]` for `(u, v)` centred Gaussian with covariance `[[a, b], [b, c]]`.
fn relu_moment(a: f64, b: f64, c: f64) -> f64 {
    let ac = (a * c).sqrt();
    if !(ac > 0.0) {
        return 0.0;
    }
    let u = (b / ac).clamp(-1.0, 1.0);
    ac / (2.0 * PI) * ((1.0 - u * u).sqrt() + u * (PI - u.acos()))
}

impl NngpEvaluator {
    pub fn new(x: Array2<f64>, sigma_w: f64, depth: usize) -> Self {
        Self { x: Arc::new(x), sigma_w2: sigma_w * sigma_w, depth }
    }

    /// Kernel value from the raw input inner products.
    pub fn from_inner(&self, xx: f64, xy: f64, yy: f64, d: usize) -> f64 {
        let s = self.sigma_w2;
        let scale = s / d as f64;
        let (mut a, mut b, mut c) = (scale * xx, scale * xy, scale * yy);
        for _ in 1..self.depth {
            let nb = s * relu_moment(a, b, c);
            a = s * a / 2.0;
            c = s * c / 2.0;
            b = nb;
        }
        b
    }
}

impl PairwiseKernel for NngpEvaluator {
    fn len(&self) -> usize {
        self.x.nrows()
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        let (xi, xj) = (self.x.row(i), self.x.row(j));
        self.from_inner(xi.dot(&xi), xi.dot(&xj), xj.dot(&xj), self.x.ncols())
    }

    fn feature_dim(&self) -> FeatureDim {
        FeatureDim::Infinite
    }

    fn restrict(&self, idx: &[usize]) -> Arc<dyn PairwiseKernel> {
        Arc::new(NngpEvaluator { x: Arc::new(self.x.select(Axis(0), idx)), sigma_w2: self.sigma_w2, depth: self.depth })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_network, untrained};
    use ndarray::array;

    fn relu_cfg(widths: Vec<usize>) -> ModelConfig {
        ModelConfig::new(widths, Activation::Relu, 3)
    }

    #[test]
    fn linear_kernel_values() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [0.3, 0.4]];
        let k = base_linear(x.view());
        assert_eq!(k.eval(0, 0), 1.0);
        assert_eq!(k.eval(0, 1), -1.0);
        let g = k.gram();
        assert_eq!(g, x.dot(&x.t()));
    }

    #[test]
    fn grad_dominates_last_layer() {
        let cfg = relu_cfg(vec![3, 5, 4, 1]);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5], [0.0, 0.3, 0.9]];
        let g = base_grad(&m, x.view()).unwrap().diag();
        let l = base_last_layer(&m, x.view()).unwrap().diag();
        assert!(g.iter().zip(&l).all(|(a, b)| a + 1e-15 >= *b));
    }

    #[test]
    fn single_layer_grad_is_last_layer() {
        let cfg = relu_cfg(vec![3, 1]);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let x = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        assert_eq!(base_grad(&m, x.view()).unwrap().gram(), base_last_layer(&m, x.view()).unwrap().gram());
    }

    #[test]
    fn dead_last_layer_gives_bias_kernel() {
        let cfg = relu_cfg(vec![1, 3, 1]);
        let mut p = init_network::<f64>(&cfg).unwrap();
        p.weights[0].fill(-1.0);
        let m = untrained(&cfg, p).unwrap();
        let k = base_last_layer(&m, array![[1.0], [2.0]].view()).unwrap();
        assert!(k.gram().iter().all(|&v| (v - 0.04).abs() < 1e-15));
    }

    #[test]
    fn nngp_diagonal_halves_per_layer() {
        let e = NngpEvaluator::new(array![[1.0, 2.0]], 1.5, 3);
        let k1 = 2.25 / 2.0 * 5.0;
        let want = 2.25 * (2.25 * k1 / 2.0) / 2.0;
        assert!((e.eval(0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn nngp_orthogonal_inputs() {
        let e = NngpEvaluator::new(array![[1.0, 0.0], [0.0, 2.0]], 1.0, 2);
        let (a, c) = (0.5, 2.0);
        let want = (a * c as f64).sqrt() / (2.0 * PI);
        assert!((e.eval(0, 1) - want).abs() < 1e-14);
    }

    #[test]
    fn nngp_zero_input_is_zero() {
        let e = NngpEvaluator::new(array![[0.0, 0.0], [1.0, 1.0]], 1.0, 3);
        assert_eq!(e.eval(0, 0), 0.0);
        assert_eq!(e.eval(0, 1), 0.0);
    }

    #[test]
    fn nngp_rejects_silu() {
        let cfg = ModelConfig::new(vec![2, 4, 1], Activation::Silu, 0);
        assert!(matches!(base_nngp(&cfg, array![[1.0, 2.0]].view()), Err(Error::Unsupported(_))));
    }
}
