//! Batch selection: the iterative template, the forward-backward template, and
//! the selection methods that plug into them.
//!
//! States index points by their position in the candidate list, which holds
//! the training points first (TP mode only) followed by the pool.

mod bait;
mod distance;
mod frank_wolfe;
mod maxdet;
mod simple;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

pub use bait::BaitState;
pub use distance::{DistanceRule, DistanceState};
pub use frank_wolfe::{FwFeatures, FwKernel};
pub use maxdet::{MaxDetFeatures, MaxDetKernel};
pub use simple::{MaxDiag, RandomOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    MaxDiag,
    MaxDet,
    BaitF,
    BaitFb,
    Fw,
    MaxDist,
    KMeansPP,
    Lcmd,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Method::Random,
            "maxdiag" => Method::MaxDiag,
            "maxdet" => Method::MaxDet,
            "bait-f" => Method::BaitF,
            "bait-fb" => Method::BaitFb,
            "fw" => Method::Fw,
            "maxdist" => Method::MaxDist,
            "kmeanspp" => Method::KMeansPP,
            "lcmd" => Method::Lcmd,
            other => return Err(Error::Config(format!("unknown selection method '{other}'"))),
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Random => "random",
            Method::MaxDiag => "maxdiag",
            Method::MaxDet => "maxdet",
            Method::BaitF => "bait-f",
            Method::BaitFb => "bait-fb",
            Method::Fw => "fw",
            Method::MaxDist => "maxdist",
            Method::KMeansPP => "kmeanspp",
            Method::Lcmd => "lcmd",
        })
    }
}

/// Whether diversity is measured against the batch only or against train and batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    P,
    TP,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" => Ok(Mode::P),
            "tp" => Ok(Mode::TP),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::P => "p",
            Mode::TP => "tp",
        })
    }
}

/// Kernel-space or feature-space variant for methods that have both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Space {
    #[default]
    Auto,
    Kernel,
    Features,
}

#[derive(Clone, Debug)]
pub struct SelectionRequest<'a> {
    pub method: Method,
    pub mode: Mode,
    pub kernel: &'a Kernel,
    /// Ground-set indices of the labelled points.
    pub train: &'a [usize],
    /// Ground-set indices of the unlabelled candidates.
    pub pool: &'a [usize],
    pub n_batch: usize,
    pub sigma2: f64,
    /// Extra forward steps for `bait-fb`; defaults to `min(n_batch, n_pool - n_batch)`.
    pub n_extra: Option<usize>,
    pub rng_seed: u64,
    pub space: Space,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    RandomFilled(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Ground-set indices in selection order.
    pub batch: Vec<usize>,
    pub status: Status,
    /// Score of each method-chosen point; randomly filled points have none.
    pub scores: Vec<f64>,
}

/// Init/Add/Next interface shared by the iterative methods.
pub trait Selector {
    /// Conditions the state on candidate `i`.
    fn add(&mut self, i: usize) -> Result<()>;
    /// Best available candidate and its score, or `None` when the method cannot choose.
    fn next(&mut self, available: &[bool]) -> Option<(usize, f64)>;
}

/// Lowest-index maximizer of `score` over available candidates, skipping NaN.
pub(crate) fn argmax_by(available: &[bool], mut score: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, _) in available.iter().enumerate().filter(|(_, &a)| a) {
        let s = score(i);
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Outcome of a template run over candidate positions.
pub(crate) struct Picks {
    pub chosen: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Iterative template: add the mode points, then alternate Next and Add.
pub fn run_iterative<S: Selector + ?Sized>(state: &mut S, n_mode: usize, n_cand: usize, n_batch: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let p = iterate(state, n_mode, n_cand, n_batch)?;
    Ok((p.chosen, p.scores))
}

pub(crate) fn iterate<S: Selector + ?Sized>(state: &mut S, n_mode: usize, n_cand: usize, n_batch: usize) -> Result<Picks> {
    for i in 0..n_mode {
        state.add(i)?;
    }
    let mut available = vec![false; n_cand];
    available[n_mode..].iter_mut().for_each(|a| *a = true);
    let mut chosen = Vec::with_capacity(n_batch);
    let mut scores = Vec::with_capacity(n_batch);
    while chosen.len() < n_batch {
        match state.next(&available) {
            Some((i, s)) if i < n_cand && available[i] && s.is_finite() => {
                available[i] = false;
                chosen.push(i);
                scores.push(s);
                state.add(i)?;
            }
            _ => break,
        }
    }
    Ok(Picks { chosen, scores })
}

fn fill_random(chosen: &mut Vec<usize>, n_mode: usize, n_cand: usize, n_batch: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut taken = vec![false; n_cand];
    chosen.iter().for_each(|&i| taken[i] = true);
    let mut rest: Vec<usize> = (n_mode..n_cand).filter(|&i| !taken[i]).collect();
    let missing = n_batch - chosen.len();
    let (extra, _) = rest.partial_shuffle(&mut rng, missing);
    let extra = extra.to_vec();
    chosen.extend(extra);
    missing
}

fn method_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Selects `n_batch` pool points.
pub fn select(req: &SelectionRequest) -> Result<SelectionResult> {
    let n_pool = req.pool.len();
    if req.n_batch > n_pool {
        return Err(Error::Config(format!("batch size {} exceeds pool size {n_pool}", req.n_batch)));
    }
    if let Some(&bad) = req.train.iter().chain(req.pool).find(|&&i| i >= req.kernel.len()) {
        return Err(Error::Dimension { expected: req.kernel.len(), got: bad });
    }
    if !(req.sigma2 >= 0.0) {
        return Err(Error::Config("sigma2 must be non-negative".into()));
    }
    let mode: &[usize] = match req.mode {
        Mode::TP => req.train,
        Mode::P => &[],
    };
    let cand: Vec<usize> = mode.iter().chain(req.pool).copied().collect();
    let n_mode = mode.len();
    let n_cand = cand.len();
    let picks = match req.method {
        Method::Random => {
            iterate(&mut RandomOrder::new(n_mode, n_cand, method_rng(req.rng_seed)), n_mode, n_cand, req.n_batch)?
        }
        Method::MaxDiag => {
            let diag = req.kernel.restrict(&cand).diag();
            iterate(&mut MaxDiag::new(diag.view(), n_mode), n_mode, n_cand, req.n_batch)?
        }
        Method::MaxDet => {
            let k = req.kernel.restrict(&cand);
            let use_features = match req.space {
                Space::Features => true,
                Space::Kernel => false,
                Space::Auto => {
                    let n_sel = n_mode + req.n_batch;
                    req.sigma2 > 0.0
                        && k.is_feature_backed()
                        && k.feature_dim().finite().is_some_and(|d| n_sel > 3 * d)
                }
            };
            if use_features {
                let mut s = MaxDetFeatures::new(k.features()?, req.sigma2)?;
                iterate(&mut s, n_mode, n_cand, req.n_batch)?
            } else {
                let mut s = MaxDetKernel::new(k, req.sigma2, n_mode + req.n_batch);
                iterate(&mut s, n_mode, n_cand, req.n_batch)?
            }
        }
        Method::BaitF | Method::BaitFb => {
            let phi_cand = features_for(req.kernel, &cand, req.method)?;
            let tp: Vec<usize> = req.train.iter().chain(req.pool).copied().collect();
            let phi_tp = match req.mode {
                Mode::TP => phi_cand.clone(),
                Mode::P => features_for(req.kernel, &tp, req.method)?,
            };
            let mut s = BaitState::new(phi_cand, phi_tp.view(), req.sigma2)?;
            if req.method == Method::BaitF {
                iterate(&mut s, n_mode, n_cand, req.n_batch)?
            } else {
                let n_extra = req.n_extra.unwrap_or(req.n_batch.min(n_pool - req.n_batch)).min(n_pool - req.n_batch);
                bait::forward_backward(&mut s, n_mode, n_cand, req.n_batch, n_extra)?
            }
        }
        Method::Fw => {
            let k = req.kernel.restrict(&cand);
            let kernel_space = match req.space {
                Space::Kernel => true,
                Space::Features => false,
                Space::Auto => !k.is_feature_backed(),
            };
            if kernel_space {
                iterate(&mut FwKernel::new(&k)?, n_mode, n_cand, req.n_batch)?
            } else {
                iterate(&mut FwFeatures::new(k.features()?), n_mode, n_cand, req.n_batch)?
            }
        }
        Method::MaxDist | Method::KMeansPP | Method::Lcmd => {
            let rule = match req.method {
                Method::MaxDist => DistanceRule::MaxDist,
                Method::KMeansPP => DistanceRule::KMeansPP(method_rng(req.rng_seed)),
                _ => DistanceRule::Lcmd,
            };
            let mut s = DistanceState::new(req.kernel.restrict(&cand), n_mode, rule);
            iterate(&mut s, n_mode, n_cand, req.n_batch)?
        }
    };
    let Picks { mut chosen, scores } = picks;
    let status = if chosen.len() < req.n_batch {
        Status::RandomFilled(fill_random(&mut chosen, n_mode, n_cand, req.n_batch, req.rng_seed))
    } else {
        Status::Ok
    };
    Ok(SelectionResult { batch: chosen.into_iter().map(|i| cand[i]).collect(), status, scores })
}

fn features_for(kernel: &Kernel, idx: &[usize], method: Method) -> Result<Array2<f64>> {
    kernel.restrict(idx).features().map_err(|e| match e {
        Error::Unsupported(msg) => Error::Unsupported(format!("{method} needs explicit features: {msg}")),
        other => other,
    })
}
