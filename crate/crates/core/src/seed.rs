//! Deterministic seed derivation: one root seed fans out into independent streams.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(root, label)`; distinct labels give unrelated streams.
pub fn derive(root: u64, label: u64) -> u64 {
    mix(mix(root) ^ mix(label.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Child seed for a path of labels, e.g. `(stage, step)`.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &l| derive(s, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_labels_distinct_seeds() {
        let seeds: Vec<u64> = (0..100).map(|l| derive(42, l)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(derive_path(1, &[2, 3]), derive(derive(1, 2), 3));
    }
}
