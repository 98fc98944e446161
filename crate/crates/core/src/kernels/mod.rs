//! Kernels over an indexed ground set and the transformations between them.
//!
//! A kernel is stored in structured form: plain feature matrices, sums, products,
//! or opaque pairwise evaluators. Evaluation never expands a product into its
//! Kronecker features; explicit features are only built on request.

mod base;
mod spec;
mod transform;

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::linalg::power_iteration;

pub use base::{base_grad, base_last_layer, base_linear, base_nngp, NngpEvaluator};
pub use spec::{parse_kernel_spec, BaseKernel, KernelSpec, Transform};
pub use transform::{
    build_kernel, transform_acs_grad, transform_acs_rf, transform_ensemble, transform_posterior,
    transform_posterior_with, transform_rp, transform_rp_with, transform_scale, KernelContext,
    PosteriorPath,
};

/// Largest feature matrix, in entries, that is built explicitly.
pub const MATERIALIZE_CAP: usize = 200_000_000;

/// Feature-space dimension of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureDim {
    Finite(usize),
    Infinite,
}

impl FeatureDim {
    pub fn finite(self) -> Option<usize> {
        match self {
            FeatureDim::Finite(d) => Some(d),
            FeatureDim::Infinite => None,
        }
    }
}

/// Lazily evaluated kernel over `0..len()`.
pub trait PairwiseKernel: Send + Sync + fmt::Debug {
    fn len(&self) -> usize;
    fn eval(&self, i: usize, j: usize) -> f64;
    fn feature_dim(&self) -> FeatureDim;
    fn restrict(&self, idx: &[usize]) -> Arc<dyn PairwiseKernel>;

    fn diag(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.len(), |i| self.eval(i, i))
    }

    fn column(&self, j: usize) -> Array1<f64> {
        Array1::from_shape_fn(self.len(), |i| self.eval(i, j))
    }
}

#[derive(Clone, Debug)]
enum Structure {
    Features(Arc<Array2<f64>>),
    Sum(Vec<Structure>),
    Product(Box<Structure>, Box<Structure>),
    Evaluator(Arc<dyn PairwiseKernel>),
}

impl Structure {
    fn len(&self) -> usize {
        match self {
            Structure::Features(f) => f.nrows(),
            Structure::Sum(parts) => parts[0].len(),
            Structure::Product(a, _) => a.len(),
            Structure::Evaluator(e) => e.len(),
        }
    }

    fn feature_dim(&self) -> FeatureDim {
        use FeatureDim::*;
        match self {
            Structure::Features(f) => Finite(f.ncols()),
            Structure::Sum(parts) => parts.iter().try_fold(0, |acc, p| p.feature_dim().finite().map(|d| acc + d)).map_or(Infinite, Finite),
            Structure::Product(a, b) => match (a.feature_dim(), b.feature_dim()) {
                (Finite(x), Finite(y)) => Finite(x * y),
                _ => Infinite,
            },
            Structure::Evaluator(e) => e.feature_dim(),
        }
    }

    fn has_evaluator(&self) -> bool {
        match self {
            Structure::Features(_) => false,
            Structure::Sum(parts) => parts.iter().any(Structure::has_evaluator),
            Structure::Product(a, b) => a.has_evaluator() || b.has_evaluator(),
            Structure::Evaluator(_) => true,
        }
    }

    fn eval(&self, i: usize, j: usize) -> f64 {
        match self {
            Structure::Features(f) => f.row(i).dot(&f.row(j)),
            Structure::Sum(parts) => parts.iter().map(|p| p.eval(i, j)).sum(),
            Structure::Product(a, b) => a.eval(i, j) * b.eval(i, j),
            Structure::Evaluator(e) => e.eval(i, j),
        }
    }

    fn diag(&self) -> Array1<f64> {
        match self {
            Structure::Features(f) => f.rows().into_iter().map(|r| r.dot(&r)).collect(),
            Structure::Sum(parts) => sum_arrays(parts.iter().map(Structure::diag)),
            Structure::Product(a, b) => a.diag() * b.diag(),
            Structure::Evaluator(e) => e.diag(),
        }
    }

    fn column(&self, j: usize) -> Array1<f64> {
        match self {
            Structure::Features(f) => f.dot(&f.row(j)),
            Structure::Sum(parts) => sum_arrays(parts.iter().map(|p| p.column(j))),
            Structure::Product(a, b) => a.column(j) * b.column(j),
            Structure::Evaluator(e) => e.column(j),
        }
    }

    fn gram(&self) -> Array2<f64> {
        match self {
            Structure::Features(f) => f.dot(&f.t()),
            Structure::Sum(parts) => sum_arrays(parts.iter().map(Structure::gram)),
            Structure::Product(a, b) => a.gram() * b.gram(),
            Structure::Evaluator(e) => {
                let n = e.len();
                let mut g = Array2::zeros((n, n));
                for j in 0..n {
                    g.column_mut(j).assign(&e.column(j));
                }
                g
            }
        }
    }

    fn restrict(&self, idx: &[usize]) -> Structure {
        match self {
            Structure::Features(f) => Structure::Features(Arc::new(f.select(Axis(0), idx))),
            Structure::Sum(parts) => Structure::Sum(parts.iter().map(|p| p.restrict(idx)).collect()),
            Structure::Product(a, b) => Structure::Product(Box::new(a.restrict(idx)), Box::new(b.restrict(idx))),
            Structure::Evaluator(e) => Structure::Evaluator(e.restrict(idx)),
        }
    }

    fn scaled(&self, c: f64) -> Structure {
        match self {
            Structure::Features(f) => {
                let s = c.sqrt();
                Structure::Features(Arc::new(f.mapv(|v| v * s)))
            }
            Structure::Sum(parts) => Structure::Sum(parts.iter().map(|p| p.scaled(c)).collect()),
            Structure::Product(a, b) => Structure::Product(Box::new(a.scaled(c)), b.clone()),
            Structure::Evaluator(e) => Structure::Evaluator(Arc::new(ScaledEvaluator { inner: e.clone(), factor: c })),
        }
    }

    fn materialize(&self) -> Result<Array2<f64>> {
        match self {
            Structure::Features(f) => Ok((**f).clone()),
            Structure::Sum(parts) => {
                let mats = parts.iter().map(Structure::materialize).collect::<Result<Vec<_>>>()?;
                let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
                Ok(ndarray::concatenate(Axis(1), &views).expect("summands share the ground set"))
            }
            Structure::Product(a, b) => {
                let (fa, fb) = (a.materialize()?, b.materialize()?);
                let (n, da, db) = (fa.nrows(), fa.ncols(), fb.ncols());
                let mut out = Array2::zeros((n, da * db));
                Zip::from(out.rows_mut()).and(fa.rows()).and(fb.rows()).for_each(|mut o, ra, rb| {
                    for (k, &x) in ra.iter().enumerate() {
                        for (m, &y) in rb.iter().enumerate() {
                            o[k * db + m] = x * y;
                        }
                    }
                });
                Ok(out)
            }
            Structure::Evaluator(_) => Err(Error::Unsupported("kernel has no explicit feature map".into())),
        }
    }
}

fn sum_arrays<D: ndarray::Dimension>(mut it: impl Iterator<Item = ndarray::Array<f64, D>>) -> ndarray::Array<f64, D> {
    let mut acc = it.next().expect("non-empty sum");
    for a in it {
        acc += &a;
    }
    acc
}

#[derive(Debug)]
struct ScaledEvaluator {
    inner: Arc<dyn PairwiseKernel>,
    factor: f64,
}

impl PairwiseKernel for ScaledEvaluator {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn eval(&self, i: usize, j: usize) -> f64 {
        self.factor * self.inner.eval(i, j)
    }
    fn feature_dim(&self) -> FeatureDim {
        self.inner.feature_dim()
    }
    fn restrict(&self, idx: &[usize]) -> Arc<dyn PairwiseKernel> {
        Arc::new(ScaledEvaluator { inner: self.inner.restrict(idx), factor: self.factor })
    }
    fn diag(&self) -> Array1<f64> {
        self.inner.diag() * self.factor
    }
    fn column(&self, j: usize) -> Array1<f64> {
        self.inner.column(j) * self.factor
    }
}

/// Positive-semidefinite kernel over `0..len()`.
#[derive(Clone, Debug)]
pub struct Kernel {
    structure: Structure,
}

impl Kernel {
    pub fn from_features(features: Array2<f64>) -> Self {
        Self { structure: Structure::Features(Arc::new(features)) }
    }

    pub fn from_evaluator(e: Arc<dyn PairwiseKernel>) -> Self {
        Self { structure: Structure::Evaluator(e) }
    }

    /// Sum of kernels over the same ground set.
    pub fn sum(parts: Vec<Kernel>) -> Result<Self> {
        let n = parts.first().ok_or_else(|| Error::Config("empty kernel sum".into()))?.len();
        if let Some(bad) = parts.iter().find(|k| k.len() != n) {
            return Err(Error::Dimension { expected: n, got: bad.len() });
        }
        if parts.len() == 1 {
            return Ok(parts.into_iter().next().unwrap());
        }
        Ok(Self { structure: Structure::Sum(parts.into_iter().map(|k| k.structure).collect()) })
    }

    /// Pointwise product of two kernels over the same ground set.
    pub fn product(a: Kernel, b: Kernel) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension { expected: a.len(), got: b.len() });
        }
        Ok(Self { structure: Structure::Product(Box::new(a.structure), Box::new(b.structure)) })
    }

    pub fn len(&self) -> usize {
        self.structure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> FeatureDim {
        self.structure.feature_dim()
    }

    /// True if an explicit feature matrix exists and fits under [`MATERIALIZE_CAP`].
    pub fn is_feature_backed(&self) -> bool {
        !self.structure.has_evaluator()
            && self.feature_dim().finite().is_some_and(|d| d.saturating_mul(self.len()) <= MATERIALIZE_CAP)
    }

    pub fn eval(&self, i: usize, j: usize) -> f64 {
        self.structure.eval(i, j)
    }

    pub fn diag(&self) -> Array1<f64> {
        self.structure.diag()
    }

    /// `k(x_i, x_j)` for all `i`.
    pub fn column(&self, j: usize) -> Array1<f64> {
        self.structure.column(j)
    }

    pub fn gram(&self) -> Array2<f64> {
        self.structure.gram()
    }

    /// Kernel on the listed points, renumbered `0..idx.len()`.
    pub fn restrict(&self, idx: &[usize]) -> Kernel {
        Kernel { structure: self.structure.restrict(idx) }
    }

    /// Multiplies the kernel by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Kernel {
        Kernel { structure: self.structure.scaled(c) }
    }

    /// Explicit feature matrix, one row per point.
    pub fn features(&self) -> Result<Array2<f64>> {
        if !self.is_feature_backed() {
            return Err(Error::Unsupported(match self.feature_dim() {
                FeatureDim::Infinite => "kernel has no finite feature map".into(),
                FeatureDim::Finite(d) if self.structure.has_evaluator() => {
                    format!("kernel of dimension {d} is only available as a pairwise evaluator")
                }
                FeatureDim::Finite(d) => format!("{} x {d} feature matrix exceeds the materialization cap", self.len()),
            }));
        }
        self.structure.materialize()
    }
}

/// `trace(ΦᵀΦ) / λ_max(ΦᵀΦ)` over the pool rows.
pub fn effective_dim(k: &Kernel, pool: &[usize]) -> Result<f64> {
    let phi = k.restrict(pool).features()?;
    effective_dim_of(phi.view())
}

fn effective_dim_of(phi: ArrayView2<f64>) -> Result<f64> {
    let trace: f64 = phi.iter().map(|v| v * v).sum();
    if trace == 0.0 {
        return Ok(0.0);
    }
    let lambda = power_iteration(phi.ncols(), |v| phi.t().dot(&phi.dot(v)), 1e-6, 1000);
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    Ok(trace / lambda)
}
