//! Kernel transformations: scaling, GP posterior, sketching, ensembling, ACS kernels.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::base::{base_grad, base_last_layer, base_linear, base_nngp};
use super::spec::{BaseKernel, KernelSpec, Transform};
use super::{FeatureDim, Kernel, PairwiseKernel, Structure};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, solve_lower, solve_lower_transpose};
use crate::model::TrainedModel;
use crate::seed;

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")))
    }
}

fn check_indices(k: &Kernel, idx: &[usize]) -> Result<()> {
    match idx.iter().find(|&&i| i >= k.len()) {
        Some(&i) => Err(Error::Dimension { expected: k.len(), got: i }),
        None => Ok(()),
    }
}

/// Rescales so the mean diagonal over `train` is one.
pub fn transform_scale(k: &Kernel, train: &[usize]) -> Result<Kernel> {
    check_indices(k, train)?;
    if train.is_empty() {
        return Err(Error::Degenerate("scale needs at least one training point".into()));
    }
    let mean = k.restrict(train).diag().mean().unwrap();
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Degenerate(format!("mean training diagonal is {mean}")));
    }
    Ok(k.scaled(1.0 / mean))
}

/// Which formula realizes the posterior kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorPath {
    /// Feature map when `d_feat <= max(1024, 3 |obs|)` and features exist, else kernel form.
    Auto,
    /// `σ L⁻¹ φ(x)` with `L Lᵀ = ΦᵀΦ + σ²I`.
    Features,
    /// `k(x, x') - k(x, X)(K + σ²I)⁻¹k(X, x')` via a stored Cholesky factor.
    Kernel,
}

/// GP posterior covariance after observing `obs` with noise variance `sigma2`.
pub fn transform_posterior(k: &Kernel, obs: &[usize], sigma2: f64) -> Result<Kernel> {
    transform_posterior_with(k, obs, sigma2, PosteriorPath::Auto)
}

pub fn transform_posterior_with(k: &Kernel, obs: &[usize], sigma2: f64, path: PosteriorPath) -> Result<Kernel> {
    check_sigma2(sigma2)?;
    check_indices(k, obs)?;
    if obs.is_empty() {
        return Ok(k.clone());
    }
    let use_features = match path {
        PosteriorPath::Features => true,
        PosteriorPath::Kernel => false,
        PosteriorPath::Auto => {
            k.is_feature_backed() && k.feature_dim().finite().is_some_and(|d| d <= 1024.max(3 * obs.len()))
        }
    };
    if use_features {
        posterior_features(k, obs, sigma2)
    } else {
        posterior_kernel(k, obs, sigma2)
    }
}

fn posterior_features(k: &Kernel, obs: &[usize], sigma2: f64) -> Result<Kernel> {
    let phi = k.features()?;
    let phi_obs = phi.select(Axis(0), obs);
    let mut m = phi_obs.t().dot(&phi_obs);
    m.diag_mut().mapv_inplace(|v| v + sigma2);
    let l = cholesky(m.view())?;
    let mapped = solve_lower(l.view(), phi.t()).reversed_axes() * sigma2.sqrt();
    Ok(Kernel::from_features(mapped))
}

fn posterior_kernel(k: &Kernel, obs: &[usize], sigma2: f64) -> Result<Kernel> {
    let n = k.len();
    let mut cross = Array2::zeros((obs.len(), n));
    for (r, &j) in obs.iter().enumerate() {
        cross.row_mut(r).assign(&k.column(j));
    }
    let mut g = cross.select(Axis(1), obs);
    g.diag_mut().mapv_inplace(|v| v + sigma2);
    let l = cholesky(g.view())?;
    let w = solve_lower(l.view(), cross.view()).reversed_axes();
    Ok(Kernel::from_evaluator(Arc::new(PosteriorEvaluator { base: k.clone(), w: Arc::new(w) })))
}

/// `k(i, j) - <w_i, w_j>` where `W Wᵀ = k(·, X)(K + σ²I)⁻¹k(X, ·)`.
#[derive(Debug)]
struct PosteriorEvaluator {
    base: Kernel,
    w: Arc<Array2<f64>>,
}

impl PairwiseKernel for PosteriorEvaluator {
    fn len(&self) -> usize {
        self.base.len()
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        self.base.eval(i, j) - self.w.row(i).dot(&self.w.row(j))
    }

    fn feature_dim(&self) -> FeatureDim {
        self.base.feature_dim()
    }

    fn restrict(&self, idx: &[usize]) -> Arc<dyn PairwiseKernel> {
        Arc::new(PosteriorEvaluator { base: self.base.restrict(idx), w: Arc::new(self.w.select(Axis(0), idx)) })
    }

    fn diag(&self) -> Array1<f64> {
        let sq: Array1<f64> = self.w.rows().into_iter().map(|r| r.dot(&r)).collect();
        self.base.diag() - sq
    }

    fn column(&self, j: usize) -> Array1<f64> {
        self.base.column(j) - self.w.dot(&self.w.row(j))
    }
}

fn sketch(s: &Structure, p: usize, draw: &mut dyn FnMut(usize, usize) -> Array2<f64>) -> Result<Array2<f64>> {
    match s {
        Structure::Features(f) => {
            let u = draw(p, f.ncols());
            if u.dim() != (p, f.ncols()) {
                return Err(Error::Dimension { expected: p * f.ncols(), got: u.len() });
            }
            Ok(f.dot(&u.t()) / (p as f64).sqrt())
        }
        Structure::Sum(parts) => {
            let mut acc = sketch(&parts[0], p, draw)?;
            for part in &parts[1..] {
                acc += &sketch(part, p, draw)?;
            }
            Ok(acc)
        }
        Structure::Product(a, b) => {
            let sa = sketch(a, p, draw)?;
            let sb = sketch(b, p, draw)?;
            Ok(sa * sb * (p as f64).sqrt())
        }
        Structure::Evaluator(_) => Err(Error::Unsupported("cannot sketch a kernel without a finite feature map".into())),
    }
}

/// Gaussian sketch to `p` features; sums and products are sketched factor-wise.
pub fn transform_rp(k: &Kernel, p: usize, seed: u64) -> Result<Kernel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    };
    transform_rp_with(k, p, &mut draw)
}

/// As [`transform_rp`], with projection matrices (`p x d`) supplied by the caller.
pub fn transform_rp_with(k: &Kernel, p: usize, draw: &mut dyn FnMut(usize, usize) -> Array2<f64>) -> Result<Kernel> {
    if p == 0 {
        return Err(Error::Config("sketch dimension must be at least 1".into()));
    }
    Ok(Kernel::from_features(sketch(&k.structure, p, draw)?))
}

/// Sum of kernels; feature maps concatenate.
pub fn transform_ensemble(kernels: Vec<Kernel>) -> Result<Kernel> {
    Kernel::sum(kernels)
}

/// `σ⁻⁴ k_scale(x, x') k_train(x, x')`, kept as a product so it can be sketched.
pub fn transform_acs_grad(k: &Kernel, train: &[usize], sigma2: f64) -> Result<Kernel> {
    check_sigma2(sigma2)?;
    let scaled = transform_scale(k, train)?;
    let post = transform_posterior(&scaled, train, sigma2)?;
    Kernel::product(scaled.scaled(1.0 / (sigma2 * sigma2)), post)
}

/// Monte Carlo features of the expected log-likelihood kernel.
///
/// Draws `p` weight vectors from the Bayesian linear posterior fitted to the
/// training residuals `labels - predictions` and evaluates, per point,
/// `½ ln(1 + v/σ²) - ((θᵀφ)² + v) / (2σ²)` with `v` the posterior variance.
pub fn transform_acs_rf(
    k: &Kernel,
    train: &[usize],
    p: usize,
    sigma2: f64,
    labels: ArrayView1<f64>,
    predictions: ArrayView1<f64>,
    seed: u64,
) -> Result<Kernel> {
    check_sigma2(sigma2)?;
    if p == 0 {
        return Err(Error::Config("acs-rf needs at least one sample".into()));
    }
    for len in [labels.len(), predictions.len()] {
        if len != train.len() {
            return Err(Error::Dimension { expected: train.len(), got: len });
        }
    }
    let scaled = transform_scale(k, train)?;
    let phi = scaled.features()?;
    let var = transform_posterior(&scaled, train, sigma2)?.diag().mapv(|v| v.max(0.0));
    let resid = &labels - &predictions;
    let phi_tr = phi.select(Axis(0), train);
    let mut m = phi_tr.t().dot(&phi_tr);
    m.diag_mut().mapv_inplace(|v| v + sigma2);
    let l = cholesky(m.view())?;
    let mean = cholesky_solve(l.view(), phi_tr.t().dot(&resid).view());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Array2::from_shape_simple_fn((phi.ncols(), p), || StandardNormal.sample(&mut rng));
    let mut theta = solve_lower_transpose(l.view(), z.view()) * sigma2.sqrt();
    for mut col in theta.columns_mut() {
        col += &mean;
    }
    Ok(Kernel::from_features(acs_features(phi.dot(&theta).view(), var.view(), sigma2)))
}

/// Rows `p^{-1/2} f(x, θ_s)` from projections `θ_sᵀφ(x)` and posterior variances.
fn acs_features(proj: ArrayView2<f64>, var: ArrayView1<f64>, sigma2: f64) -> Array2<f64> {
    let norm = 1.0 / (proj.ncols() as f64).sqrt();
    let mut out = proj.to_owned();
    for (mut row, &v) in out.rows_mut().into_iter().zip(var) {
        let head = 0.5 * (v / sigma2).ln_1p();
        row.mapv_inplace(|t| norm * (head - (t * t + v) / (2.0 * sigma2)));
    }
    out
}

/// Inputs needed to turn a parsed spec into a kernel.
pub struct KernelContext<'a, F> {
    /// Ground set rows: training points followed by pool points, or any order.
    pub x: ArrayView2<'a, f64>,
    pub train: &'a [usize],
    /// One trained model per ensemble member; the first is used without `ens`.
    pub models: &'a [TrainedModel<F>],
    /// Training labels, required by `acs-rf`.
    pub train_labels: Option<ArrayView1<'a, f64>>,
    /// Model predictions on the training points, required by `acs-rf`.
    pub train_predictions: Option<ArrayView1<'a, f64>>,
    pub seed: u64,
}

impl<F: NdFloat> KernelContext<'_, F> {
    fn base(&self, base: BaseKernel, member: usize) -> Result<Kernel> {
        let model = || {
            self.models.get(member).ok_or_else(|| Error::Config(format!("kernel needs trained model #{member}")))
        };
        match base {
            BaseKernel::Linear => Ok(base_linear(self.x)),
            BaseKernel::LastLayer => base_last_layer(model()?, self.x),
            BaseKernel::Grad => base_grad(model()?, self.x),
            BaseKernel::Nngp => base_nngp(&model()?.config, self.x),
        }
    }

    fn apply(&self, k: &Kernel, t: Transform, seed: u64) -> Result<Kernel> {
        match t {
            Transform::Scale => transform_scale(k, self.train),
            Transform::Post { sigma2 } => transform_posterior(k, self.train, sigma2),
            Transform::Rp { p } => transform_rp(k, p, seed),
            Transform::AcsGrad { sigma2 } => transform_acs_grad(k, self.train, sigma2),
            Transform::AcsRf { p, sigma2 } => {
                let missing = || Error::Config("acs-rf needs training labels and predictions".into());
                let labels = self.train_labels.ok_or_else(missing)?;
                let preds = self.train_predictions.ok_or_else(missing)?;
                transform_acs_rf(k, self.train, p, sigma2, labels, preds, seed)
            }
            Transform::Ens { .. } => unreachable!("ensembling is handled by build_kernel"),
        }
    }
}

/// Builds the kernel described by `spec`. Transforms before `ens(n)` run once
/// per ensemble member; the rest run on the summed kernel.
pub fn build_kernel<F: NdFloat>(spec: &KernelSpec, ctx: &KernelContext<F>) -> Result<Kernel> {
    let ens_at: Vec<usize> =
        spec.transforms.iter().enumerate().filter(|(_, t)| matches!(t, Transform::Ens { .. })).map(|(i, _)| i).collect();
    if ens_at.len() > 1 {
        return Err(Error::Config("at most one ens transform is supported".into()));
    }
    let (members, split) = match ens_at.first() {
        Some(&i) => match spec.transforms[i] {
            Transform::Ens { n } => (n, i),
            _ => unreachable!(),
        },
        None => (1, spec.transforms.len()),
    };
    let mut parts = Vec::with_capacity(members);
    for member in 0..members {
        let mut k = ctx.base(spec.base, member)?;
        for (pos, &t) in spec.transforms[..split].iter().enumerate() {
            k = ctx.apply(&k, t, seed::derive_path(ctx.seed, &[member as u64, pos as u64]))?;
        }
        parts.push(k);
    }
    let mut k = transform_ensemble(parts)?;
    for (pos, &t) in spec.transforms.iter().enumerate().skip(split + 1) {
        k = ctx.apply(&k, t, seed::derive_path(ctx.seed, &[members as u64, pos as u64]))?;
    }
    Ok(k)
}
