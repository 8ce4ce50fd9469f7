//! Posterior point estimates and credible intervals, the S-POET frequentist
//! comparator with its asymptotic confidence intervals, and dimensionality
//! reduction with NMSE / CVE.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{DataMatrix, SampleSpectrum};
use crate::sampler::PosteriorDraws;
use crate::stats;

/// Posterior summary of one sorted eigenvalue: mean plus equal-tailed 95%
/// quantiles. The mean is not forced inside the quantile band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenSummary {
    pub index: usize,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub interval_length: f64,
}

/// Per-rank posterior mean and 2.5%/97.5% type-7 quantiles of the sorted
/// eigenvalue draws, for ranks 1..=k.
pub fn summarize_eigenvalues(draws: &PosteriorDraws, k: usize) -> Result<Vec<EigenSummary>> {
    if draws.draw_count() == 0 {
        return Err(Error::Degenerate("no retained draws to summarize".into()));
    }
    if k > draws.p {
        return Err(Error::InvalidInput(format!(
            "requested {k} summaries for dimension {}",
            draws.p
        )));
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let col: Vec<f64> = draws.sorted_lambda.column(i).to_vec();
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        let lo = stats::quantile_type7_sorted(&sorted, 0.025);
        let hi = stats::quantile_type7_sorted(&sorted, 0.975);
        out.push(EigenSummary {
            index: i + 1,
            point: stats::mean(&col),
            lo,
            hi,
            interval_length: hi - lo,
        });
    }
    Ok(out)
}

/// Posterior eigenvector estimates: each draw's rank-r vector is flipped to
/// have nonnegative inner product with the r-th reference column (the
/// sample eigenvector), averaged over draws, then normalized. Returns a
/// p x k matrix of unit columns.
pub fn estimate_eigenvectors(
    draws: &PosteriorDraws,
    reference: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let (p, k) = (draws.p, draws.k);
    if draws.draw_count() == 0 {
        return Err(Error::Degenerate("no retained draws to summarize".into()));
    }
    if reference.nrows() != p || reference.ncols() < k {
        return Err(Error::InvalidInput(
            "reference must supply one column per retained eigenvector".into(),
        ));
    }
    let mut out = Array2::zeros((p, k));
    for r in 0..k {
        let mut acc = Array1::<f64>::zeros(p);
        for d in 0..draws.draw_count() {
            let v = draws.vector(d, r);
            let sign = if reference.column(r).dot(&v) < 0.0 {
                -1.0
            } else {
                1.0
            };
            acc.scaled_add(sign, &v);
        }
        let norm = acc.dot(&acc).sqrt();
        if norm <= 1e-12 * draws.draw_count() as f64 {
            return Err(Error::Degenerate(format!(
                "posterior eigenvector {} averages to zero",
                r + 1
            )));
        }
        acc.mapv_inplace(|x| x / norm);
        out.column_mut(r).assign(&acc);
    }
    Ok(out)
}

/// S-POET shrinkage eigenvalues
/// λ̂ˢ_j = λ̂_j - p/(np - nk - pk) · (tr S - Σ_{i<=k} λ̂_i), j = 1..k.
pub fn spoet_eigenvalues(ss: &SampleSpectrum, k: usize) -> Result<Vec<f64>> {
    let (n, p) = (ss.n as f64, ss.p as f64);
    let kf = k as f64;
    if k == 0 || k > ss.rank_bound() {
        return Err(Error::InvalidInput(format!("invalid spike count {k}")));
    }
    let denom = n * p - n * kf - p * kf;
    if !(denom > 0.0) {
        return Err(Error::Config(format!(
            "S-POET needs np - nk - pk > 0; got {denom} (k too large for n = {n}, p = {p})"
        )));
    }
    let top_sum: f64 = ss.eigenvalues.iter().take(k).sum();
    let residual = (ss.trace - top_sum).max(0.0);
    let correction = p / denom * residual;
    Ok(ss
        .eigenvalues
        .iter()
        .take(k)
        .map(|&l| l - correction)
        .collect())
}

/// Confidence interval for one true eigenvalue from the asymptotic law
/// sqrt(n)(λ̂ˢ/λ₀ - 1) => N(0, 2):
/// (value/(1 + z sqrt(2/n)), value/(1 - z sqrt(2/n))).
pub fn spoet_interval(value: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "level must lie in [0, 1), got {level}"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let width = z * (2.0 / n as f64).sqrt();
    if !(1.0 - width > 0.0) {
        return Err(Error::Config(format!(
            "sample size {n} too small for level {level} (1 - z sqrt(2/n) <= 0)"
        )));
    }
    Ok((value / (1.0 + width), value / (1.0 - width)))
}

/// Rank-k reconstruction X·U₁·U₁ᵀ with its normalized mean squared error
/// (MSE divided by the squared range of X).
#[derive(Clone, Debug)]
pub struct Reduction {
    pub x_hat: Array2<f64>,
    pub nmse: f64,
}

pub fn reduce_reconstruct(x: &DataMatrix, u1: &ArrayView2<f64>) -> Result<Reduction> {
    let (n, p) = (x.n(), x.p());
    if u1.nrows() != p {
        return Err(Error::InvalidInput(
            "projection basis has wrong row count".into(),
        ));
    }
    let k = u1.ncols();
    // orthonormal columns to 1e-8
    for a in 0..k {
        for b in a..k {
            let dot = u1.column(a).dot(&u1.column(b));
            let target = if a == b { 1.0 } else { 0.0 };
            if (dot - target).abs() > 1e-8 {
                return Err(Error::InvalidInput(
                    "projection basis is not orthonormal".into(),
                ));
            }
        }
    }
    let lo = x.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate(
            "constant data matrix has zero range".into(),
        ));
    }
    let scores = x.values().dot(u1); // n x k
    let x_hat = scores.dot(&u1.t()); // n x p
    let mse = x
        .values()
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (n * p) as f64;
    Ok(Reduction {
        x_hat,
        nmse: mse / (range * range),
    })
}

/// Cumulative variance explained by the top-k sample eigenvalues:
/// Σ_{i<=k} λ̂_i / Σ_i λ̂_i.
pub fn cumulative_variance_explained(ss: &SampleSpectrum, k: usize) -> f64 {
    let total: f64 = ss.eigenvalues.sum();
    let top: f64 = ss.eigenvalues.iter().take(k).sum();
    top / total
}
