//! Small numeric helpers shared across modules: stable hashing for seed
//! derivation and splits, medians, and rank-based AUC.

use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used everywhere a policy or generator needs randomness.
/// ChaCha8 is seedable from a `u64` and stable across platforms.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer. Stable across platforms and builds, unlike the
/// std `DefaultHasher`, so splits and derived seeds survive recompilation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a purpose tag.
pub fn mix_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(base ^ h)
}

/// Map an id to a uniform fraction in [0, 1) under a fixed seed.
/// Used for stable train/val assignment: the fraction of a given id never
/// changes as the dataset grows.
pub fn stable_fraction(id: u64, seed: u64) -> f64 {
    let h = splitmix64(id ^ splitmix64(seed));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Median of a slice; the even-count median is the mean of the two middle
/// values. Panics on empty input (callers guard).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Area under the ROC curve separating positive from negative scores,
/// computed by the rank statistic with the usual half-credit for ties.
/// Returns `None` when either class is empty.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("non-finite score in auc"));

    // Sum average ranks of the positives (ranks are 1-based; ties share
    // their average rank).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos = positives.len() as f64;
    let n_neg = negatives.len() as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Some(u / (n_pos * n_neg))
}
