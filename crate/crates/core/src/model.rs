//! Fully connected regression network in the neural tangent parametrization.
//!
//! Layer `l` computes `z = sigma_w / sqrt(d_in) * W x + sigma_b * b`. The same
//! code runs in `f32` for training and `f64` for reference checks.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl Activation {
    fn apply<F: NdFloat>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Silu => z / (F::one() + (-z).exp()),
        }
    }

    fn derivative<F: NdFloat>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = F::one() / (F::one() + (-z).exp());
                s * (F::one() + z * (F::one() - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `d_0, ..., d_L`; the last entry must be 1.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Default scaling constants for the given activation.
    pub fn new(widths: Vec<usize>, activation: Activation, init_seed: u64) -> Self {
        let (sigma_w, sigma_b) = match activation {
            Activation::Relu => (0.2, 0.2),
            Activation::Silu => (0.5, 1.0),
        };
        Self { widths, activation, sigma_w, sigma_b, init_seed }
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if *self.widths.last().unwrap() != 1 {
            return Err(Error::Config("output width must be 1".into()));
        }
        if !(self.sigma_w > 0.0 && self.sigma_b > 0.0) {
            return Err(Error::Config("sigma_w and sigma_b must be positive".into()));
        }
        Ok(())
    }

    fn weight_scale<F: NdFloat>(&self, layer: usize) -> F {
        F::from(self.sigma_w / (self.widths[layer] as f64).sqrt()).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    /// `weights[l]` has shape `d_{l+1} x d_l`.
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: NdFloat> ModelParams<F> {
    pub fn cast<G: NdFloat>(&self) -> ModelParams<G> {
        let c = |v: &F| G::from(*v).unwrap();
        ModelParams {
            weights: self.weights.iter().map(|w| w.map(c)).collect(),
            biases: self.biases.iter().map(|b| b.map(c)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// Standard-normal weights and zero biases, drawn in 64-bit and cast.
pub fn init_network<F: NdFloat>(config: &ModelConfig) -> Result<ModelParams<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut weights = Vec::with_capacity(config.depth());
    let mut biases = Vec::with_capacity(config.depth());
    for l in 0..config.depth() {
        let (d_in, d_out) = (config.widths[l], config.widths[l + 1]);
        let w = Array2::from_shape_simple_fn((d_out, d_in), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            F::from(v).unwrap()
        });
        weights.push(w);
        biases.push(Array1::zeros(d_out));
    }
    Ok(ModelParams { weights, biases })
}

/// Per-layer values from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    /// `inputs[l]` is the input `x^(l)` to layer `l + 1`; `inputs[0]` is the data.
    pub inputs: Vec<Array2<F>>,
    /// `preacts[l]` is `z^(l+1)`.
    pub preacts: Vec<Array2<F>>,
}

fn check_params<F: NdFloat>(params: &ModelParams<F>, config: &ModelConfig) -> Result<()> {
    if params.weights.len() != config.depth() || params.biases.len() != config.depth() {
        return Err(Error::Dimension { expected: config.depth(), got: params.weights.len() });
    }
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let want = (config.widths[l + 1], config.widths[l]);
        if w.dim() != want {
            return Err(Error::Dimension { expected: want.0 * want.1, got: w.len() });
        }
        if b.len() != want.0 {
            return Err(Error::Dimension { expected: want.0, got: b.len() });
        }
    }
    Ok(())
}

pub fn forward<F: NdFloat>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    x: ArrayView2<F>,
) -> Result<(Array1<F>, ForwardCache<F>)> {
    check_params(params, config)?;
    if x.ncols() != config.input_dim() {
        return Err(Error::Dimension { expected: config.input_dim(), got: x.ncols() });
    }
    let sb = F::from(config.sigma_b).unwrap();
    let depth = config.depth();
    let mut inputs = Vec::with_capacity(depth);
    let mut preacts = Vec::with_capacity(depth);
    let mut cur = x.to_owned();
    for l in 0..depth {
        let mut z = cur.dot(&params.weights[l].t());
        let scale = config.weight_scale::<F>(l);
        let bias = params.biases[l].mapv(|b| b * sb);
        Zip::from(z.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&bias).for_each(|v, &b| *v = *v * scale + b);
        });
        inputs.push(cur);
        cur = if l + 1 < depth { z.mapv(|v| config.activation.apply(v)) } else { Array2::zeros((0, 0)) };
        preacts.push(z);
    }
    let pred = preacts[depth - 1].column(0).to_owned();
    Ok((pred, ForwardCache { inputs, preacts }))
}

/// Backpropagates `dout = d(objective)/d z^(L)` and returns `d objective / d z^(l)` per layer.
fn sensitivities<F: NdFloat>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    cache: &ForwardCache<F>,
    dout: ArrayView1<F>,
) -> Vec<Array2<F>> {
    let depth = config.depth();
    let mut deltas = vec![Array2::zeros((0, 0)); depth];
    deltas[depth - 1] = dout.to_owned().insert_axis(Axis(1));
    for l in (0..depth - 1).rev() {
        let scale = config.weight_scale::<F>(l + 1);
        let mut d = deltas[l + 1].dot(&params.weights[l + 1]);
        Zip::from(&mut d).and(&cache.preacts[l]).for_each(|g, &z| {
            *g = *g * scale * config.activation.derivative(z);
        });
        deltas[l] = d;
    }
    deltas
}

fn param_gradients<F: NdFloat>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    cache: &ForwardCache<F>,
    dout: ArrayView1<F>,
) -> ModelParams<F> {
    let sb = F::from(config.sigma_b).unwrap();
    let deltas = sensitivities(params, config, cache, dout);
    let mut weights = Vec::with_capacity(deltas.len());
    let mut biases = Vec::with_capacity(deltas.len());
    for (l, d) in deltas.iter().enumerate() {
        let scale = config.weight_scale::<F>(l);
        weights.push(d.t().dot(&cache.inputs[l]) * scale);
        biases.push(d.sum_axis(Axis(0)) * sb);
    }
    ModelParams { weights, biases }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub initial_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub train_seed: u64,
}

impl TrainConfig {
    pub fn for_activation(activation: Activation, train_seed: u64) -> Self {
        let initial_lr = match activation {
            Activation::Relu => 0.375,
            Activation::Silu => 0.15,
        };
        Self {
            epochs: 256,
            minibatch_size: 256,
            initial_lr,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("epochs and minibatch size must be positive".into()));
        }
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.initial_lr >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
    /// Validation RMSE after each epoch.
    pub train_history: Vec<f64>,
}

struct Adam<F> {
    m: ModelParams<F>,
    v: ModelParams<F>,
    t: i32,
}

impl<F: NdFloat> Adam<F> {
    fn new(params: &ModelParams<F>) -> Self {
        let zeros = ModelParams {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, params: &mut ModelParams<F>, grads: &ModelParams<F>, lr: F, tc: &TrainConfig) {
        self.t += 1;
        let one = F::one();
        let b1 = F::from(tc.adam_beta1).unwrap();
        let b2 = F::from(tc.adam_beta2).unwrap();
        let eps = F::from(tc.adam_eps).unwrap();
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let upd = |p: &mut F, m: &mut F, v: &mut F, g: F| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| upd(p, m, v, g));
            Zip::from(&mut params.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| upd(p, m, v, g));
        }
    }
}

fn rmse<F: NdFloat>(pred: &Array1<F>, y: ArrayView1<F>) -> f64 {
    let n = pred.len().max(1) as f64;
    let sq: f64 = pred.iter().zip(y).map(|(p, t)| (*p - *t).to_f64().unwrap().powi(2)).sum();
    (sq / n).sqrt()
}

/// Adam on the mean squared error with a linearly decaying learning rate.
///
/// Parameters are restored from the epoch with the lowest validation RMSE.
pub fn train<F: NdFloat>(
    params: ModelParams<F>,
    config: &ModelConfig,
    tc: &TrainConfig,
    train_x: ArrayView2<F>,
    train_y: ArrayView1<F>,
    valid_x: ArrayView2<F>,
    valid_y: ArrayView1<F>,
) -> Result<TrainedModel<F>> {
    tc.validate()?;
    check_params(&params, config)?;
    let n = train_x.nrows();
    if train_y.len() != n {
        return Err(Error::Dimension { expected: n, got: train_y.len() });
    }
    if valid_x.nrows() == 0 || valid_y.len() != valid_x.nrows() {
        return Err(Error::Config("validation set must be non-empty and labelled".into()));
    }
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut params = params;
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.train_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let steps_per_epoch = n.div_ceil(tc.minibatch_size);
    let total_steps = (tc.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, ModelParams<F>)> = None;

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.minibatch_size) {
            let xb = train_x.select(Axis(0), chunk);
            let yb = train_y.select(Axis(0), chunk);
            let (pred, cache) = forward(&params, config, xb.view())?;
            let resid = &pred - &yb;
            let m = F::from(chunk.len()).unwrap();
            let loss = resid.iter().fold(F::zero(), |acc, &r| acc + r * r) / m;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let two = F::from(2.0).unwrap();
            let dout = resid.mapv(|r| two * r / m);
            let grads = param_gradients(&params, config, &cache, dout.view());
            let lr = tc.initial_lr * (1.0 - step as f64 / total_steps);
            adam.step(&mut params, &grads, F::from(lr).unwrap(), tc);
            step += 1;
        }
        let (pred, _) = forward(&params, config, valid_x)?;
        let score = rmse(&pred, valid_y);
        if !score.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(score);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, params.clone()));
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainedModel { config: config.clone(), params, train_history: history })
}

/// Per-layer factors of the parameter gradient: `d z^(L) / d W~^(l) = out_l in_lᵀ`.
#[derive(Clone, Debug)]
pub struct GradFactors<F> {
    /// `n x (d_{l-1} + 1)`: scaled layer input with a trailing `sigma_b` column.
    pub ins: Vec<Array2<F>>,
    /// `n x d_l`: sensitivity of the output to the layer's pre-activation.
    pub outs: Vec<Array2<F>>,
}

impl<F: NdFloat> TrainedModel<F> {
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Array1<F>> {
        forward(&self.params, &self.config, x).map(|(p, _)| p)
    }

    fn scaled_input(&self, cache: &ForwardCache<F>, l: usize) -> Array2<F> {
        let scale = self.config.weight_scale::<F>(l);
        let x = &cache.inputs[l];
        let bias = Array2::from_elem((x.nrows(), 1), F::from(self.config.sigma_b).unwrap());
        concatenate![Axis(1), x.mapv(|v| v * scale), bias]
    }

    /// Input to the last layer, scaled and extended by the bias slot.
    pub fn ll_features(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        let (_, cache) = forward(&self.params, &self.config, x)?;
        Ok(self.scaled_input(&cache, self.config.depth() - 1))
    }

    pub fn grad_factors(&self, x: ArrayView2<F>) -> Result<GradFactors<F>> {
        let (_, cache) = forward(&self.params, &self.config, x)?;
        let ones = Array1::from_elem(x.nrows(), F::one());
        let outs = sensitivities(&self.params, &self.config, &cache, ones.view());
        let ins = (0..self.config.depth()).map(|l| self.scaled_input(&cache, l)).collect();
        Ok(GradFactors { ins, outs })
    }
}

impl<F: NdFloat> GradFactors<F> {
    /// Full gradient of the output for sample `i`, flattened layer by layer as `[W | b]` row-major.
    pub fn flat_gradient(&self, i: usize) -> Array1<F> {
        let mut out = Vec::new();
        for (a, b) in self.ins.iter().zip(&self.outs) {
            for &o in b.row(i) {
                out.extend(a.row(i).iter().map(|&v| o * v));
            }
        }
        Array1::from(out)
    }

    pub fn to_f64(&self) -> GradFactors<f64> {
        let c = |m: &Array2<F>| m.mapv(|v| v.to_f64().unwrap());
        GradFactors { ins: self.ins.iter().map(c).collect(), outs: self.outs.iter().map(c).collect() }
    }
}

/// Wraps fixed parameters as a model without training, e.g. for freshly initialized nets.
pub fn untrained<F: NdFloat>(config: &ModelConfig, params: ModelParams<F>) -> Result<TrainedModel<F>> {
    check_params(&params, config)?;
    Ok(TrainedModel { config: config.clone(), params, train_history: Vec::new() })
}

/// Layer `l`'s `[W | b]` block of a flat gradient, for tests that compare layouts.
pub fn layer_slice(config: &ModelConfig, flat: ArrayView1<f64>, l: usize) -> Array2<f64> {
    let offset: usize = (0..l).map(|k| config.widths[k + 1] * (config.widths[k] + 1)).sum();
    let (rows, cols) = (config.widths[l + 1], config.widths[l] + 1);
    flat.slice(s![offset..offset + rows * cols]).to_owned().into_shape_with_order((rows, cols)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(widths: Vec<usize>, seed: u64) -> ModelConfig {
        ModelConfig::new(widths, Activation::Relu, seed)
    }

    #[test]
    fn init_biases_zero_and_deterministic() {
        let cfg = tiny(vec![3, 5, 1], 7);
        let a: ModelParams<f64> = init_network(&cfg).unwrap();
        let b: ModelParams<f64> = init_network(&cfg).unwrap();
        assert!(a.biases[0].iter().all(|&v| v == 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn init_moments() {
        let cfg = tiny(vec![100, 100, 1], 3);
        let p: ModelParams<f64> = init_network(&cfg).unwrap();
        let w = &p.weights[0];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.mapv(|v| (v - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 5.0 / n.sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn invalid_configs() {
        assert!(init_network::<f64>(&tiny(vec![3], 0)).is_err());
        assert!(init_network::<f64>(&tiny(vec![3, 0, 1], 0)).is_err());
        assert!(init_network::<f64>(&tiny(vec![3, 2], 0)).is_err());
    }

    #[test]
    fn zero_weights_predict_zero() {
        let cfg = tiny(vec![2, 4, 1], 0);
        let mut p: ModelParams<f64> = init_network(&cfg).unwrap();
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        let (pred, _) = forward(&p, &cfg, array![[1.0, -2.0], [3.0, 4.0]].view()).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_by_hand() {
        let mut cfg = tiny(vec![1, 1], 0);
        cfg.sigma_w = 1.0;
        let p = ModelParams { weights: vec![array![[3.0]]], biases: vec![array![0.0]] };
        let (pred, _) = forward(&p, &cfg, array![[2.0]].view()).unwrap();
        assert_eq!(pred[0], 6.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let cfg = tiny(vec![2, 3, 1], 0);
        let p: ModelParams<f64> = init_network(&cfg).unwrap();
        assert!(forward(&p, &cfg, array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn relu_homogeneity_without_sign_flips() {
        let cfg = tiny(vec![3, 6, 6, 1], 11);
        let p: ModelParams<f64> = init_network(&cfg).unwrap();
        let x = array![[0.3, -0.7, 1.1]];
        let (a, _) = forward(&p, &cfg, x.view()).unwrap();
        let (b, _) = forward(&p, &cfg, (&x * 2.0).view()).unwrap();
        // Zero biases make a ReLU net positively homogeneous of degree one.
        assert!((b[0] - 2.0 * a[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let cfg = tiny(vec![2, 4, 1], 1);
        let p: ModelParams<f64> = init_network(&cfg).unwrap();
        let mut tc = TrainConfig::for_activation(Activation::Relu, 0);
        tc.epochs = 1;
        tc.initial_lr = 0.0;
        let x = array![[0.1, 0.2], [0.3, -0.4]];
        let y = array![1.0, -1.0];
        let m = train(p.clone(), &cfg, &tc, x.view(), y.view(), x.view(), y.view()).unwrap();
        assert_eq!(m.params, p);
        assert_eq!(m.train_history.len(), 1);
    }

    #[test]
    fn overfits_single_point() {
        let cfg = tiny(vec![2, 8, 1], 4);
        let p: ModelParams<f32> = init_network(&cfg).unwrap();
        let mut tc = TrainConfig::for_activation(Activation::Relu, 5);
        tc.epochs = 300;
        tc.initial_lr = 0.05;
        let x = array![[0.5f32, -0.5]];
        let y = array![0.8f32];
        let m = train(p, &cfg, &tc, x.view(), y.view(), x.view(), y.view()).unwrap();
        let err = (m.predict(x.view()).unwrap()[0] - 0.8).abs();
        assert!(err < 1e-2, "err {err}");
    }

    #[test]
    fn restores_best_epoch() {
        let cfg = tiny(vec![2, 8, 1], 9);
        let p: ModelParams<f32> = init_network(&cfg).unwrap();
        let mut tc = TrainConfig::for_activation(Activation::Relu, 2);
        tc.epochs = 20;
        let x = array![[0.5f32, -0.5], [0.1, 0.9], [-0.3, 0.2]];
        let y = array![0.8f32, -0.2, 0.1];
        let vx = array![[0.4f32, 0.4]];
        let vy = array![0.3f32];
        let m = train(p, &cfg, &tc, x.view(), y.view(), vx.view(), vy.view()).unwrap();
        let best = m.train_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rmse(&m.predict(vx.view()).unwrap(), vy.view()), best);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = tiny(vec![2, 8, 1], 9);
        let p: ModelParams<f32> = init_network(&cfg).unwrap();
        let tc = TrainConfig { epochs: 5, minibatch_size: 2, ..TrainConfig::for_activation(Activation::Relu, 2) };
        let x = array![[0.5f32, -0.5], [0.1, 0.9], [-0.3, 0.2]];
        let y = array![0.8f32, -0.2, 0.1];
        let a = train(p.clone(), &cfg, &tc, x.view(), y.view(), x.view(), y.view()).unwrap();
        let b = train(p, &cfg, &tc, x.view(), y.view(), x.view(), y.view()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.train_history, b.train_history);
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let cfg = tiny(vec![1, 2, 1], 0);
        let p: ModelParams<f64> = init_network(&cfg).unwrap();
        let tc = TrainConfig { epochs: 2, ..TrainConfig::for_activation(Activation::Relu, 0) };
        let x = array![[1.0]];
        let y = array![f64::NAN];
        let err = train(p, &cfg, &tc, x.view(), y.view(), x.view(), y.view()).unwrap_err();
        assert_eq!(err, Error::NonFiniteLoss { epoch: 0 });
    }

    #[test]
    fn ll_features_end_in_sigma_b() {
        let cfg = tiny(vec![2, 3, 1], 0);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let f = m.ll_features(array![[1.0, 2.0], [-1.0, 0.5]].view()).unwrap();
        assert!(f.column(3).iter().all(|&v| v == 0.2));
    }

    #[test]
    fn dead_last_layer_leaves_bias_feature() {
        let cfg = tiny(vec![1, 3, 1], 0);
        let mut p: ModelParams<f64> = init_network(&cfg).unwrap();
        p.weights[0].fill(-1.0);
        let m = untrained(&cfg, p).unwrap();
        let f = m.ll_features(array![[2.0]].view()).unwrap();
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.2]);
    }

    #[test]
    fn single_layer_factors_by_hand() {
        let cfg = tiny(vec![2, 1], 0);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let g = m.grad_factors(array![[3.0, 4.0]].view()).unwrap();
        let s = 0.2 / 2f64.sqrt();
        assert_eq!(g.ins[0].row(0).to_vec(), vec![3.0 * s, 4.0 * s, 0.2]);
        assert_eq!(g.outs[0][[0, 0]], 1.0);
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for &z in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Silu.apply(z + h) - Activation::Silu.apply(z - h)) / (2.0 * h);
            assert!((fd - Activation::Silu.derivative(z)).abs() < 1e-8);
        }
    }
}
