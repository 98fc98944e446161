//! Brute-force reference implementations for tests. Slow by design, 64-bit
//! throughout, and written without the main code paths they check.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig, TrainedModel};

/// Largest instance an oracle accepts.
pub const MAX_POINTS: usize = 64;

fn guard(n: usize) -> Result<()> {
    if n > MAX_POINTS {
        return Err(Error::Config(format!("oracle instance has {n} points, limit is {MAX_POINTS}")));
    }
    Ok(())
}

fn to_na(g: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[[i, j]])
}

fn sub(g: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| g[(rows[a], cols[b])])
}

/// `k(i, j) - k(i, X)(K + σ²I)⁻¹k(X, j)` by dense LU solve.
pub fn naive_posterior(gram: ArrayView2<f64>, obs: &[usize], sigma2: f64, i: usize, j: usize) -> Result<f64> {
    guard(gram.nrows())?;
    let g = to_na(gram);
    if obs.is_empty() {
        return Ok(g[(i, j)]);
    }
    let mut m = sub(&g, obs, obs);
    for a in 0..obs.len() {
        m[(a, a)] += sigma2;
    }
    let kj = DVector::from_iterator(obs.len(), obs.iter().map(|&o| g[(o, j)]));
    let ki = DVector::from_iterator(obs.len(), obs.iter().map(|&o| g[(i, o)]));
    let sol = m.lu().solve(&kj).ok_or_else(|| Error::Numerical("singular observation matrix".into()))?;
    Ok(g[(i, j)] - ki.dot(&sol))
}

/// Full posterior Gram matrix, entry by entry.
pub fn naive_posterior_gram(gram: ArrayView2<f64>, obs: &[usize], sigma2: f64) -> Result<Array2<f64>> {
    let n = gram.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = naive_posterior(gram, obs, sigma2, i, j)?;
        }
    }
    Ok(out)
}

fn det_with_noise(g: &DMatrix<f64>, set: &[usize], sigma2: f64) -> f64 {
    let mut m = sub(g, set, set);
    for a in 0..set.len() {
        m[(a, a)] += sigma2;
    }
    m.lu().determinant()
}

/// Greedy sequence maximizing `det(K[S] + σ²I)` over `candidates`, starting from `preselected`.
///
/// Also returns the smallest gap between the best and second-best determinant
/// ratio over all steps, so callers can discard near-tied instances.
pub fn naive_greedy_maxdet_from(
    gram: ArrayView2<f64>,
    sigma2: f64,
    preselected: &[usize],
    candidates: &[usize],
    n_batch: usize,
) -> Result<(Vec<usize>, f64)> {
    guard(gram.nrows())?;
    let g = to_na(gram);
    let mut set = preselected.to_vec();
    let mut picks = Vec::new();
    let mut min_gap = f64::INFINITY;
    for _ in 0..n_batch {
        let base = det_with_noise(&g, &set, sigma2);
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .filter(|c| !picks.contains(*c))
            .map(|&c| {
                let mut s = set.clone();
                s.push(c);
                (c, det_with_noise(&g, &s, sigma2) / base)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if scored.len() > 1 {
            min_gap = min_gap.min(scored[0].1 - scored[1].1);
        }
        let best = scored.first().ok_or_else(|| Error::Config("no candidates left".into()))?.0;
        picks.push(best);
        set.push(best);
    }
    Ok((picks, min_gap))
}

/// Greedy determinant maximization over all points.
pub fn naive_greedy_maxdet(gram: ArrayView2<f64>, sigma2: f64, n_batch: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..gram.nrows()).collect();
    naive_greedy_maxdet_from(gram, sigma2, &[], &all, n_batch).map(|(p, _)| p)
}

/// Summed posterior variance over `tp` after observing `sel`.
pub fn naive_bait_objective(features: ArrayView2<f64>, tp: &[usize], sel: &[usize], sigma2: f64) -> Result<f64> {
    let gram = features.dot(&features.t());
    tp.iter().map(|&x| naive_posterior(gram.view(), sel, sigma2, x, x)).sum()
}

fn kernel_dist(g: ArrayView2<f64>, a: usize, b: usize) -> f64 {
    (g[[a, a]] + g[[b, b]] - 2.0 * g[[a, b]]).max(0.0).sqrt()
}

/// Largest distance from a point of `pool` to its nearest point of `centers`.
pub fn cover_radius(gram: ArrayView2<f64>, centers: &[usize], pool: &[usize]) -> f64 {
    pool.iter()
        .map(|&p| centers.iter().map(|&c| kernel_dist(gram, p, c)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Optimal covering radius of the pool (all points outside `mode`) over all
/// batches of size `n_batch`, with `mode` points always counted as centers.
pub fn brute_force_cover_radius(gram: ArrayView2<f64>, n_batch: usize, mode: &[usize]) -> Result<f64> {
    guard(gram.nrows())?;
    let pool: Vec<usize> = (0..gram.nrows()).filter(|i| !mode.contains(i)).collect();
    if n_batch > pool.len() {
        return Err(Error::Config("batch larger than pool".into()));
    }
    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..n_batch).collect();
    loop {
        let centers: Vec<usize> = mode.iter().copied().chain(combo.iter().map(|&c| pool[c])).collect();
        best = best.min(cover_radius(gram, &centers, &pool));
        // Next combination in lexicographic order.
        let mut k = n_batch;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            if combo[k] < pool.len() - n_batch + k {
                combo[k] += 1;
                for m in k + 1..n_batch {
                    combo[m] = combo[m - 1] + 1;
                }
                break;
            }
        }
    }
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Silu => z / (1.0 + (-z).exp()),
    }
}

fn act_grad(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Silu => {
            let s = 1.0 / (1.0 + (-z).exp());
            s + z * s * (1.0 - s)
        }
    }
}

/// Scalar network output for one input, from nested vectors.
fn scalar_forward(cfg: &ModelConfig, w: &[Vec<Vec<f64>>], b: &[Vec<f64>], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut acts = vec![x.to_vec()];
    let mut pres = Vec::new();
    for l in 0..w.len() {
        let scale = cfg.sigma_w / (cfg.widths[l] as f64).sqrt();
        let input = acts.last().unwrap();
        let z: Vec<f64> = (0..w[l].len())
            .map(|r| scale * w[l][r].iter().zip(input).map(|(a, c)| a * c).sum::<f64>() + cfg.sigma_b * b[l][r])
            .collect();
        if l + 1 < w.len() {
            acts.push(z.iter().map(|&v| act(cfg.activation, v)).collect());
        }
        pres.push(z);
    }
    (acts, pres)
}

fn unpack(model: &TrainedModel<f64>) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let w = model.params.weights.iter().map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()).collect();
    let b = model.params.biases.iter().map(|v| v.to_vec()).collect();
    (w, b)
}

/// Flattened parameter gradients of the output, one row per input.
///
/// Layout per layer: for each output unit, its weight row followed by its bias.
pub fn explicit_gradients(model: &TrainedModel<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let cfg = &model.config;
    let n_params: usize = (0..cfg.depth()).map(|l| cfg.widths[l + 1] * (cfg.widths[l] + 1)).sum();
    if n_params * x.nrows() > 1 << 22 {
        return Err(Error::Config("explicit gradients are limited to small networks".into()));
    }
    let (w, b) = unpack(model);
    let mut out = Array2::zeros((x.nrows(), n_params));
    for (i, row) in x.rows().into_iter().enumerate() {
        let (acts, pres) = scalar_forward(cfg, &w, &b, &row.to_vec());
        let depth = w.len();
        let mut delta = vec![1.0];
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); depth];
        for l in (0..depth).rev() {
            let scale = cfg.sigma_w / (cfg.widths[l] as f64).sqrt();
            let mut g = Vec::with_capacity(w[l].len() * (cfg.widths[l] + 1));
            for (r, &dr) in delta.iter().enumerate() {
                g.extend(acts[l].iter().map(|&a| dr * scale * a));
                g.push(dr * cfg.sigma_b);
                let _ = r;
            }
            grads[l] = g;
            if l > 0 {
                delta = (0..cfg.widths[l])
                    .map(|k| {
                        let back: f64 = delta.iter().enumerate().map(|(r, &dr)| dr * w[l][r][k]).sum();
                        back * scale * act_grad(cfg.activation, pres[l - 1][k])
                    })
                    .collect();
            }
        }
        let flat: Vec<f64> = grads.concat();
        out.row_mut(i).assign(&Array1::from(flat));
    }
    Ok(out)
}

/// Gram matrix of explicit parameter gradients.
pub fn explicit_ntk(model: &TrainedModel<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let g = explicit_gradients(model, x)?;
    let n = g.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = g.row(i).iter().zip(g.row(j)).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Central finite-difference gradients with step `h`, same layout as [`explicit_gradients`].
pub fn finite_difference_gradients(model: &TrainedModel<f64>, x: ArrayView2<f64>, h: f64) -> Result<Array2<f64>> {
    let cfg = &model.config;
    let (w, b) = unpack(model);
    let n_params: usize = (0..cfg.depth()).map(|l| cfg.widths[l + 1] * (cfg.widths[l] + 1)).sum();
    let mut out = Array2::zeros((x.nrows(), n_params));
    for (i, row) in x.rows().into_iter().enumerate() {
        let input = row.to_vec();
        let eval = |w: &[Vec<Vec<f64>>], b: &[Vec<f64>]| scalar_forward(cfg, w, b, &input).1.last().unwrap()[0];
        let mut col = 0;
        for l in 0..w.len() {
            for r in 0..w[l].len() {
                for k in 0..=w[l][r].len() {
                    let (mut wp, mut bp, mut wm, mut bm) = (w.clone(), b.clone(), w.clone(), b.clone());
                    if k < w[l][r].len() {
                        wp[l][r][k] += h;
                        wm[l][r][k] -= h;
                    } else {
                        bp[l][r] += h;
                        bm[l][r] -= h;
                    }
                    out[[i, col]] = (eval(&wp, &bp) - eval(&wm, &bm)) / (2.0 * h);
                    col += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of the infinite-width kernel from random networks with
/// zero biases and hidden layers of the given `width`.
///
/// The Gaussian output layer is integrated out exactly: given the last hidden
/// activations `h`, `E[f(x) f(x')] = σ_w²/width · <h(x), h(x')>`. Averaging this
/// over sampled hidden layers estimates the same expectation as averaging
/// `f(x) f(x')` over whole networks, with far lower variance.
pub fn mc_nngp(config: &ModelConfig, x: ArrayView2<f64>, n_samples: usize, width: usize, seed: u64) -> Result<Array2<f64>> {
    mc_nngp_impl(config, x, n_samples, width, seed, true)
}

/// As [`mc_nngp`], but averaging raw products `f(x) f(x')` of sampled networks.
pub fn mc_nngp_plain(config: &ModelConfig, x: ArrayView2<f64>, n_samples: usize, width: usize, seed: u64) -> Result<Array2<f64>> {
    mc_nngp_impl(config, x, n_samples, width, seed, false)
}

fn mc_nngp_impl(config: &ModelConfig, x: ArrayView2<f64>, n_samples: usize, width: usize, seed: u64, integrate_last: bool) -> Result<Array2<f64>> {
    config.validate()?;
    if x.ncols() != config.input_dim() {
        return Err(Error::Dimension { expected: config.input_dim(), got: x.ncols() });
    }
    if n_samples == 0 || width == 0 {
        return Err(Error::Config("need at least one sample of positive width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let n = x.nrows();
    let depth = config.depth();
    let sw2 = config.sigma_w * config.sigma_w;
    let mut acc = Array2::<f64>::zeros((n, n));
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    for _ in 0..n_samples {
        // Hidden activations as columns: h has shape (fan_in, n).
        let mut h = x.t().to_owned();
        let hidden = if integrate_last { depth - 1 } else { depth };
        for l in 0..hidden {
            let fan_in = h.nrows();
            let fan_out = if l + 1 == depth { 1 } else { width };
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), &mut normal);
            let z = w.dot(&h) * (config.sigma_w / (fan_in as f64).sqrt());
            h = if l + 1 == depth { z } else { z.mapv(|v| act(Activation::Relu, v)) };
        }
        if integrate_last {
            acc += &(h.t().dot(&h) * (sw2 / h.nrows() as f64));
        } else {
            acc += &h.t().dot(&h);
        }
    }
    Ok(acc / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_network, untrained};
    use ndarray::array;

    #[test]
    fn posterior_by_hand() {
        let g = array![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]];
        assert_eq!(naive_posterior(g.view(), &[], 1.0, 1, 2).unwrap(), 6.0);
        assert!((naive_posterior(g.view(), &[0], 1.0, 1, 2).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn maxdet_by_hand() {
        let g = array![[2.0, 1.9, 0.0], [1.9, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(naive_greedy_maxdet(g.view(), 0.0, 2).unwrap(), vec![0, 2]);
        assert_eq!(naive_greedy_maxdet(g.view(), 0.0, 1).unwrap(), vec![0]);
        let diag = array![[3.0, 0.1, 0.1], [0.1, 1.0, 0.1], [0.1, 0.1, 2.0]];
        assert_eq!(naive_greedy_maxdet(diag.view(), 1e6, 3).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn bait_objective_limits() {
        let phi = array![[1.0, 0.0], [0.0, 1.0]];
        let tp = [0usize, 1];
        assert!((naive_bait_objective(phi.view(), &tp, &[], 1e-3).unwrap() - 2.0).abs() < 1e-14);
        assert!(naive_bait_objective(phi.view(), &tp, &[0, 1], 1e-12).unwrap() < 1e-9);
    }

    #[test]
    fn cover_radius_by_hand() {
        let x = array![[0.0], [1.0], [10.0]];
        let g = x.dot(&x.t());
        assert!((brute_force_cover_radius(g.view(), 1, &[]).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(brute_force_cover_radius(g.view(), 3, &[]).unwrap(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = ModelConfig::new(vec![3, 4, 3, 1], Activation::Silu, 2);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let x = array![[0.2, -0.5, 1.0], [1.5, 0.3, -0.2]];
        let a = explicit_gradients(&m, x.view()).unwrap();
        let b = finite_difference_gradients(&m, x.view(), 1e-6).unwrap();
        let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-6 * scale));
    }

    #[test]
    fn single_layer_ntk_is_linear_in_scaled_inputs() {
        let cfg = ModelConfig::new(vec![2, 1], Activation::Relu, 0);
        let m = untrained(&cfg, init_network::<f64>(&cfg).unwrap()).unwrap();
        let x = array![[1.0, 2.0], [-1.0, 0.5]];
        let k = explicit_ntk(&m, x.view()).unwrap();
        let s2 = 0.04 / 2.0;
        assert!((k[[0, 1]] - (s2 * (-1.0 + 1.0) + 0.04)).abs() < 1e-14);
    }

    #[test]
    fn mc_zero_input_is_zero() {
        let cfg = ModelConfig::new(vec![2, 8, 1], Activation::Relu, 0);
        let k = mc_nngp(&cfg, array![[0.0, 0.0]].view(), 5, 16, 1).unwrap();
        assert_eq!(k[[0, 0]], 0.0);
    }

    #[test]
    fn halving_samples_doubles_variance() {
        let cfg = ModelConfig::new(vec![3, 16, 1], Activation::Relu, 0);
        let x = array![[1.0, 0.5, -0.5]];
        let spread = |n_samples: usize, offset: u64| {
            let v: Vec<f64> = (0..400).map(|s| mc_nngp_plain(&cfg, x.view(), n_samples, 16, offset + s).unwrap()[[0, 0]]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let ratio = spread(10, 0) / spread(20, 10_000);
        assert!((1.0..=3.0).contains(&ratio), "variance ratio {ratio}");
    }

    #[test]
    fn oracles_refuse_large_instances() {
        let g = Array2::<f64>::eye(MAX_POINTS + 1);
        assert!(naive_posterior(g.view(), &[], 1.0, 0, 0).is_err());
    }
}
