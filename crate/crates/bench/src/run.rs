//! The pool-based active learning loop.

use std::time::Instant;

use bmdal_core::kernels::{base_linear, build_kernel, parse_kernel_spec, KernelContext, KernelSpec, Transform};
use bmdal_core::model::{init_network, train, Activation, ModelConfig, TrainConfig, TrainedModel};
use bmdal_core::seed;
use bmdal_core::selection::{select, Method, Mode, SelectionRequest, Space, Status};
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, split, Dataset, Split, SplitConfig};
use crate::metrics::{compute_metrics, Metrics};
use crate::BenchError;

const STAGE_SPLIT: u64 = 0;
const STAGE_INIT: u64 = 1;
const STAGE_TRAIN: u64 = 2;
const STAGE_KERNEL: u64 = 3;
const STAGE_SELECT: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmalRunConfig {
    pub kernel: String,
    pub method: Method,
    pub mode: Mode,
    pub sigma2: f64,
    pub batch_sizes: Vec<usize>,
    pub n_train_init: usize,
    pub n_valid: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BmalRunConfig {
    fn default() -> Self {
        Self {
            kernel: "grad->rp(512)".into(),
            method: Method::Lcmd,
            mode: Mode::TP,
            sigma2: 1e-6,
            batch_sizes: vec![256; 16],
            n_train_init: 256,
            n_valid: 1024,
            hidden: vec![512, 512],
            activation: Activation::Relu,
            epochs: 256,
            seed: 0,
        }
    }
}

impl BmalRunConfig {
    fn validate(&self, n_pool: usize) -> Result<KernelSpec, BenchError> {
        if self.batch_sizes.contains(&0) {
            return Err(BenchError::Config("batch sizes must be positive".into()));
        }
        let total: usize = self.batch_sizes.iter().sum();
        if total > n_pool {
            return Err(BenchError::Config(format!("batches need {total} pool points, pool has {n_pool}")));
        }
        if self.hidden.contains(&0) {
            return Err(BenchError::Config("hidden widths must be positive".into()));
        }
        Ok(parse_kernel_spec(&self.kernel)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub n_train: usize,
    pub metrics: Metrics,
    pub selection_seconds: f64,
    pub train_seconds: f64,
    /// Dataset rows acquired in this step.
    pub batch: Vec<usize>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub data: String,
    pub config: BmalRunConfig,
    pub steps: Vec<StepRecord>,
    pub version: String,
}

impl RunResult {
    /// Copy with timings zeroed, for comparisons across runs.
    pub fn without_timings(&self) -> RunResult {
        let mut r = self.clone();
        for s in &mut r.steps {
            s.selection_seconds = 0.0;
            s.train_seconds = 0.0;
        }
        r
    }
}

fn ensemble_size(spec: &KernelSpec) -> usize {
    spec.transforms.iter().find_map(|t| match t {
        Transform::Ens { n } => Some(*n),
        _ => None,
    })
    .unwrap_or(1)
}

fn rows_f32(x: &Array2<f64>, idx: &[usize]) -> Array2<f32> {
    x.select(Axis(0), idx).mapv(|v| v as f32)
}

fn labels_f32(y: &Array1<f64>, idx: &[usize]) -> Array1<f32> {
    y.select(Axis(0), idx).mapv(|v| v as f32)
}

struct Fitted {
    models: Vec<TrainedModel<f32>>,
    seconds: f64,
}

impl Fitted {
    fn predict(&self, x: &Array2<f32>) -> Result<Array1<f64>, BenchError> {
        let mut sum = Array1::<f64>::zeros(x.nrows());
        for m in &self.models {
            sum += &m.predict(x.view())?.mapv(f64::from);
        }
        Ok(sum / self.models.len() as f64)
    }
}

fn fit(data: &Dataset, cfg: &BmalRunConfig, train_idx: &[usize], valid_idx: &[usize], step: usize, members: usize) -> Result<Fitted, BenchError> {
    let start = Instant::now();
    let mut widths = vec![data.x.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let (tx, ty) = (rows_f32(&data.x, train_idx), labels_f32(&data.y, train_idx));
    let (vx, vy) = (rows_f32(&data.x, valid_idx), labels_f32(&data.y, valid_idx));
    let mut models = Vec::with_capacity(members);
    for member in 0..members {
        let path = [step as u64, member as u64];
        let mc = ModelConfig::new(widths.clone(), cfg.activation, seed::derive_path(cfg.seed, &[STAGE_INIT, path[0], path[1]]));
        let mut tc = TrainConfig::for_activation(cfg.activation, seed::derive_path(cfg.seed, &[STAGE_TRAIN, path[0], path[1]]));
        tc.epochs = cfg.epochs;
        let params = init_network::<f32>(&mc)?;
        let model = train(params, &mc, &tc, tx.view(), ty.view(), vx.view(), vy.view())
            .map_err(|e| BenchError::Step { step, source: e })?;
        models.push(model);
    }
    Ok(Fitted { models, seconds: start.elapsed().as_secs_f64() })
}

/// The split `run_bmal` uses for a dataset of `n` rows.
pub fn run_split(n: usize, cfg: &BmalRunConfig) -> Result<Split, BenchError> {
    let sc = SplitConfig { n_train_init: cfg.n_train_init, n_valid: cfg.n_valid, split_seed: seed::derive(cfg.seed, STAGE_SPLIT) };
    split(n, &sc)
}

/// Runs the loop on an already loaded dataset; features and labels are preprocessed here.
pub fn run_bmal(raw: &Dataset, cfg: &BmalRunConfig) -> Result<RunResult, BenchError> {
    let sp = run_split(raw.len(), cfg)?;
    let spec = cfg.validate(sp.pool.len())?;
    let data = preprocess(raw, &sp)?;
    let members = ensemble_size(&spec);
    let test_x = rows_f32(&data.x, &sp.test);
    let test_y = data.y.select(Axis(0), &sp.test);

    let mut train_idx = sp.train.clone();
    let mut pool_idx = sp.pool.clone();
    let mut fitted = fit(&data, cfg, &train_idx, &sp.valid, 0, members)?;
    let metrics = compute_metrics(fitted.predict(&test_x)?.as_slice().unwrap(), test_y.as_slice().unwrap())?;
    let mut steps = vec![StepRecord {
        step: 0,
        n_train: train_idx.len(),
        metrics,
        selection_seconds: 0.0,
        train_seconds: fitted.seconds,
        batch: vec![],
        status: Status::Ok,
    }];

    for (t, &n_batch) in cfg.batch_sizes.iter().enumerate() {
        let step = t + 1;
        let start = Instant::now();
        let (batch, status) = acquire(&data, cfg, &spec, &fitted, &train_idx, &pool_idx, n_batch, step)
            .map_err(|e| match e {
                BenchError::Core(source) => BenchError::Step { step, source },
                other => other,
            })?;
        let selection_seconds = start.elapsed().as_secs_f64();
        pool_idx.retain(|i| !batch.contains(i));
        train_idx.extend(&batch);

        fitted = fit(&data, cfg, &train_idx, &sp.valid, step, members)?;
        let metrics = compute_metrics(fitted.predict(&test_x)?.as_slice().unwrap(), test_y.as_slice().unwrap())?;
        steps.push(StepRecord { step, n_train: train_idx.len(), metrics, selection_seconds, train_seconds: fitted.seconds, batch, status });
    }
    Ok(RunResult { data: raw.name.clone(), config: cfg.clone(), steps, version: env!("CARGO_PKG_VERSION").into() })
}

#[allow(clippy::too_many_arguments)]
fn acquire(
    data: &Dataset,
    cfg: &BmalRunConfig,
    spec: &KernelSpec,
    fitted: &Fitted,
    train_idx: &[usize],
    pool_idx: &[usize],
    n_batch: usize,
    step: usize,
) -> Result<(Vec<usize>, Status), BenchError> {
    let ground: Vec<usize> = train_idx.iter().chain(pool_idx).copied().collect();
    let x = data.x.select(Axis(0), &ground);
    let n_train = train_idx.len();
    let local_train: Vec<usize> = (0..n_train).collect();
    let local_pool: Vec<usize> = (n_train..ground.len()).collect();
    let kernel = if cfg.method == Method::Random {
        base_linear(x.view())
    } else {
        let labels = data.y.select(Axis(0), train_idx);
        let preds = fitted.predict(&rows_f32(&data.x, train_idx))?;
        let ctx = KernelContext {
            x: x.view(),
            train: &local_train,
            models: &fitted.models,
            train_labels: Some(labels.view()),
            train_predictions: Some(preds.view()),
            seed: seed::derive_path(cfg.seed, &[STAGE_KERNEL, step as u64]),
        };
        build_kernel(spec, &ctx)?
    };
    let req = SelectionRequest {
        method: cfg.method,
        mode: cfg.mode,
        kernel: &kernel,
        train: &local_train,
        pool: &local_pool,
        n_batch,
        sigma2: cfg.sigma2,
        n_extra: None,
        rng_seed: seed::derive_path(cfg.seed, &[STAGE_SELECT, step as u64]),
        space: Space::Auto,
    };
    let r = select(&req)?;
    Ok((r.batch.into_iter().map(|i| ground[i]).collect(), r.status))
}

/// Runs one repetition per seed in parallel, returned in seed order.
pub fn run_repetitions(raw: &Dataset, cfg: &BmalRunConfig, seeds: &[u64]) -> Result<Vec<RunResult>, BenchError> {
    seeds
        .par_iter()
        .map(|&s| run_bmal(raw, &BmalRunConfig { seed: s, ..cfg.clone() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_friedman;

    fn small(method: Method, batches: Vec<usize>) -> BmalRunConfig {
        BmalRunConfig {
            kernel: "ll".into(),
            method,
            mode: Mode::P,
            batch_sizes: batches,
            n_train_init: 16,
            n_valid: 16,
            hidden: vec![8],
            epochs: 3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn empty_batch_list_gives_one_record() {
        let d = synthetic_friedman(100, 0.1, 0).unwrap();
        let r = run_bmal(&d, &small(Method::Random, vec![])).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].n_train, 16);
    }

    #[test]
    fn bookkeeping_and_disjointness() {
        let d = synthetic_friedman(120, 0.1, 0).unwrap();
        let r = run_bmal(&d, &small(Method::MaxDist, vec![4, 6, 2])).unwrap();
        let n: Vec<usize> = r.steps.iter().map(|s| s.n_train).collect();
        assert_eq!(n, vec![16, 20, 26, 28]);
        let mut seen: Vec<usize> = r.steps.iter().flat_map(|s| s.batch.clone()).collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total);
    }

    #[test]
    fn oversized_batches_rejected() {
        let d = synthetic_friedman(100, 0.1, 0).unwrap();
        assert!(matches!(run_bmal(&d, &small(Method::Random, vec![1000])), Err(BenchError::Config(_))));
    }

    #[test]
    fn ensemble_trains_members() {
        let d = synthetic_friedman(100, 0.1, 0).unwrap();
        let cfg = BmalRunConfig { kernel: "ll->ens(2)->train(1e-3)".into(), ..small(Method::MaxDet, vec![3]) };
        let r = run_bmal(&d, &cfg).unwrap();
        assert_eq!(r.steps[1].batch.len(), 3);
    }
}
