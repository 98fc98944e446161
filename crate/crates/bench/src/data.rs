//! Tabular data: CSV ingestion, splitting, preprocessing and synthetic sets.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Most indicator columns one-hot encoding may add in total.
pub const MAX_ONE_HOT_COLUMNS: usize = 300;
/// Fraction of rows used for train, validation and pool.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Cap on the number of rows used for train, validation and pool.
pub const MAX_TRAIN_ROWS: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnSource {
    Numeric { column: String },
    OneHot { column: String, category: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub columns: Vec<ColumnSource>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "nan" | "na" | "n/a" | "null" | "?")
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a CSV with a header row and `target` as the label column.
pub fn load_csv(path: &Path, target: &str) -> Result<Dataset, BenchError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| BenchError::Data(format!("target column '{target}' not found")))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.iter().any(is_missing) {
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect::<Vec<_>>());
    }
    if rows.is_empty() {
        return Err(BenchError::Data("no complete rows".into()));
    }
    let y: Array1<f64> = rows
        .iter()
        .map(|r| parse_number(&r[target_col]).ok_or_else(|| BenchError::Data(format!("non-numeric target '{}'", r[target_col]))))
        .collect::<Result<_, _>>()?;

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut columns = Vec::new();
    let mut added = 0;
    for (c, name) in headers.iter().enumerate().filter(|&(c, _)| c != target_col) {
        let numeric: Option<Vec<f64>> = rows.iter().map(|r| parse_number(&r[c])).collect();
        match numeric {
            Some(values) => {
                if values.iter().any(|&v| v != values[0]) {
                    features.push(values);
                    columns.push(ColumnSource::Numeric { column: name.clone() });
                }
            }
            None => {
                let categories: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                if categories.len() < 2 || added + categories.len() > MAX_ONE_HOT_COLUMNS {
                    continue;
                }
                added += categories.len();
                for cat in categories {
                    features.push(rows.iter().map(|r| if r[c] == cat { 1.0 } else { 0.0 }).collect());
                    columns.push(ColumnSource::OneHot { column: name.clone(), category: cat.to_owned() });
                }
            }
        }
    }
    if features.is_empty() {
        return Err(BenchError::Data("no usable feature columns".into()));
    }
    let n = rows.len();
    let x = Array2::from_shape_fn((n, features.len()), |(i, j)| features[j][i]);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Dataset { name, x, y, columns })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_train_init: usize,
    pub n_valid: usize,
    pub split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_train_init: 256, n_valid: 1024, split_seed: 0 }
    }
}

/// Disjoint row indices of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles rows and splits them; 80% (at most 200000) go to train, validation and pool.
pub fn split(n: usize, cfg: &SplitConfig) -> Result<Split, BenchError> {
    let n_used = ((n as f64 * TRAIN_FRACTION).floor() as usize).min(MAX_TRAIN_ROWS);
    if cfg.n_train_init + cfg.n_valid > n_used {
        return Err(BenchError::Data(format!(
            "{} train + {} validation rows exceed the {n_used} available",
            cfg.n_train_init, cfg.n_valid
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.split_seed));
    let (used, test) = perm.split_at(n_used);
    let (train, rest) = used.split_at(cfg.n_train_init);
    let (valid, pool) = rest.split_at(cfg.n_valid);
    Ok(Split { train: train.to_vec(), valid: valid.to_vec(), pool: pool.to_vec(), test: test.to_vec() })
}

/// Soft-clips features to (-5, 5) and standardizes labels, with statistics over train ∪ pool.
///
/// A feature that is constant on train ∪ pool maps to 0 everywhere.
pub fn preprocess(data: &Dataset, split: &Split) -> Result<Dataset, BenchError> {
    let fit: Vec<usize> = split.train.iter().chain(&split.pool).copied().collect();
    if fit.is_empty() {
        return Err(BenchError::Data("empty train and pool".into()));
    }
    let xs = data.x.select(Axis(0), &fit);
    let mean = xs.mean_axis(Axis(0)).expect("nonempty");
    let sd = xs.std_axis(Axis(0), 0.0);
    let mut x = data.x.clone();
    for ((mut col, &m), &s) in x.axis_iter_mut(Axis(1)).zip(&mean).zip(&sd) {
        col.mapv_inplace(|v| if s > 0.0 { 5.0 * ((v - m) / (5.0 * s)).tanh() } else { 0.0 });
    }
    let ys = data.y.select(Axis(0), &fit);
    let (ym, ysd) = (ys.mean().expect("nonempty"), ys.std(0.0));
    if !(ysd > 0.0) {
        return Err(BenchError::Data("labels are constant on train and pool".into()));
    }
    let y = data.y.mapv(|v| (v - ym) / ysd);
    Ok(Dataset { name: data.name.clone(), x, y, columns: data.columns.clone() })
}

/// Noise-free Friedman #1 response of the first five coordinates.
pub fn friedman_response(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman #1 inputs on [0, 1]^10 and raw labels with Gaussian noise.
pub fn friedman_raw(n: usize, noise_sd: f64, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, 10), || rng.random::<f64>());
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let y = x.rows().into_iter().map(|r| friedman_response(r.as_slice().expect("standard layout")) + noise.sample(&mut rng)).collect();
    (x, y)
}

/// Friedman #1 dataset with standardized labels.
pub fn synthetic_friedman(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset, BenchError> {
    if n < 2 {
        return Err(BenchError::Data("need at least two rows".into()));
    }
    let (x, y) = friedman_raw(n, noise_sd, seed);
    let (m, s) = (y.mean().expect("nonempty"), y.std(0.0));
    let columns = (1..=10).map(|i| ColumnSource::Numeric { column: format!("x{i}") }).collect();
    Ok(Dataset { name: "friedman".into(), x, y: y.mapv(|v| (v - m) / s), columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn numeric_passthrough() {
        let f = csv_file("a,b,y\n1,2,3\n4,5,6\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.x, ndarray::array![[1.0, 2.0], [4.0, 5.0]]);
        assert_eq!(d.y, ndarray::array![3.0, 6.0]);
    }

    #[test]
    fn constant_columns_and_missing_rows_dropped() {
        let f = csv_file("a,c,y\n1,7,3\nNaN,7,1\n2,7,6\n3,,2\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.x, ndarray::array![[1.0], [2.0]]);
        assert_eq!(d.columns, vec![ColumnSource::Numeric { column: "a".into() }]);
    }

    #[test]
    fn one_hot_by_hand() {
        let f = csv_file("color,y\nred,1\nblue,2\ngreen,3\nred,4\n");
        let d = load_csv(f.path(), "y").unwrap();
        // Categories in sorted order: blue, green, red.
        assert_eq!(d.x, ndarray::array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn large_categoricals_discarded() {
        let mut body = String::from("id,v,y\n");
        for i in 0..301 {
            body.push_str(&format!("k{i},{},{}\n", i % 3, i));
        }
        let d = load_csv(csv_file(&body).path(), "y").unwrap();
        assert_eq!(d.x.ncols(), 1);
    }

    #[test]
    fn empty_result_is_an_error() {
        assert!(load_csv(csv_file("a,y\nNaN,1\n").path(), "y").is_err());
        assert!(load_csv(csv_file("a,y\n1,1\n").path(), "z").is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split(6600, &SplitConfig { split_seed: 3, ..Default::default() }).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.pool.len(), s.test.len()), (256, 1024, 4000, 1320));
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.pool).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..6600).collect::<Vec<_>>());
        assert!(split(1000, &SplitConfig::default()).is_err());
    }

    #[test]
    fn soft_clip_values() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 2.0, 4.0, 100.0]).unwrap();
        let data = Dataset { name: "t".into(), x, y: ndarray::array![1.0, 2.0, 3.0, 4.0], columns: vec![] };
        let s = Split { train: vec![0], valid: vec![], pool: vec![1, 2], test: vec![3] };
        let p = preprocess(&data, &s).unwrap();
        // μ = 2, σ = sqrt(8/3); x = μ maps to 0.
        assert_eq!(p.x[[1, 0]], 0.0);
        assert!(p.x.iter().all(|v| v.abs() < 5.0));
        let sd = (8.0f64 / 3.0).sqrt();
        let data = Dataset { x: Array2::from_shape_vec((4, 1), vec![0.0, 2.0, 4.0, 2.0 + 5.0 * sd]).unwrap(), ..data };
        let p = preprocess(&data, &s).unwrap();
        assert!((p.x[[3, 0]] - 5.0 * 1f64.tanh()).abs() < 1e-12);
        assert!((5.0 * 1f64.tanh() - 3.8079).abs() < 1e-4);
        let fit = p.y.select(Axis(0), &[0, 1, 2]);
        assert!(fit.mean().unwrap().abs() < 1e-12 && (fit.var(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn friedman_noise_free_and_nuisance_features() {
        let (x, y) = friedman_raw(50, 0.0, 1);
        for (r, &v) in x.rows().into_iter().zip(&y) {
            let mut row = r.to_vec();
            assert_eq!(v, friedman_response(&row));
            row[5..].reverse();
            assert_eq!(v, friedman_response(&row));
        }
        let d = synthetic_friedman(500, 0.3, 2).unwrap();
        assert!(d.y.mean().unwrap().abs() < 1e-12 && (d.y.var(0.0) - 1.0).abs() < 1e-12);
    }
}
