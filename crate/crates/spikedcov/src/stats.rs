//! Small numeric helpers shared across modules: moments, quantiles,
//! log-sum-exp, batch-means standard errors, seed derivation.

/// Arithmetic mean. Returns 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor n-1). Returns 0 for fewer than 2 values.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean assuming independent samples.
pub fn se_mean(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Type-7 quantile (linear interpolation between order statistics) of an
/// unsorted sample. `p` must lie in [0, 1].
pub fn quantile_type7(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample value"));
    quantile_type7_sorted(&sorted, p)
}

/// Type-7 quantile of an already ascending-sorted sample.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// log(mean(exp(xs))) with max-shift for numerical stability.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// Batch-means standard error for a (possibly autocorrelated) MCMC chain of
/// scalar draws. Uses ~sqrt(n) batches.
pub fn batch_means_se(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let b = (n as f64).sqrt().floor() as usize; // batch size
    let nb = n / b;
    let means: Vec<f64> = (0..nb).map(|i| mean(&chain[i * b..(i + 1) * b])).collect();
    (variance(&means) / nb as f64).sqrt()
}

/// SplitMix64 finalizer; used to derive independent RNG streams from a base
/// seed and a stream index so results do not depend on scheduling.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Stream seed for replication/chain `index` derived from `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ splitmix64(index.wrapping_add(1))
}
