//! Cached HTTP download of CSV files.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::BenchError;

/// Environment variable overriding the default cache directory.
pub const CACHE_ENV: &str = "BMAL_CACHE";

/// `$BMAL_CACHE`, else `$HOME/.cache/bmal`, else `.bmal-cache`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".cache").join("bmal"),
        None => PathBuf::from(".bmal-cache"),
    }
}

/// Cache location of `url`: the hex SHA-256 of the URL.
pub fn cache_path(url: &str, cache_dir: &Path) -> PathBuf {
    cache_dir.join(format!("{}.csv", hex::encode(Sha256::digest(url.as_bytes()))))
}

/// Downloads `url` into the cache unless a nonempty copy is already there.
pub fn fetch_dataset(url: &str, cache_dir: &Path) -> Result<PathBuf, BenchError> {
    let path = cache_path(url, cache_dir);
    if fs::metadata(&path).is_ok_and(|m| m.len() > 0) {
        return Ok(path);
    }
    let mut response = ureq::get(url).call().map_err(|e| BenchError::Http(format!("{url}: {e}")))?;
    let body = response
        .body_mut()
        .with_config()
        .limit(u64::MAX)
        .read_to_vec()
        .map_err(|e| BenchError::Http(format!("{url}: {e}")))?;
    if body.is_empty() {
        return Err(BenchError::Http(format!("{url}: empty body")));
    }
    fs::create_dir_all(cache_dir)?;
    let tmp = path.with_extension("part");
    fs::write(&tmp, &body)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}
