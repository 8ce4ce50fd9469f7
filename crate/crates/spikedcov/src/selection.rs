//! Spike-count selection: WAIC over per-k gSIW chains, the sample-eigenvalue
//! Growth Ratio, and the IC_p3 residual criterion.

use ndarray::{s, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_covariance, DataMatrix, SampleSpectrum};
use crate::prior::gsiw_data_driven;
use crate::sampler::{run_chain, McmcSettings};
use crate::stats;

/// Residual floor for IC_p3 before the log, for the degenerate zero-residual
/// case (k >= rank of X).
const IC_RESIDUAL_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionCriterion {
    Waic,
    #[serde(rename = "gr")]
    GrowthRatio,
    #[serde(rename = "icp3")]
    IcP3,
}

impl SelectionCriterion {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionCriterion::Waic => "waic",
            SelectionCriterion::GrowthRatio => "gr",
            SelectionCriterion::IcP3 => "icp3",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionResult {
    pub criterion: String,
    /// scores[k-1] is the criterion value at spike count k.
    pub scores: Vec<f64>,
    pub chosen_k: usize,
}

/// WAIC from a draws x n matrix of per-observation log-likelihoods:
/// -2 lppd + 2 p_waic2, with lppd by stable log-mean-exp and the
/// variance-based effective parameter count.
pub fn waic(loglik: &ArrayView2<f64>) -> Result<f64> {
    let draws = loglik.nrows();
    if draws < 2 {
        return Err(Error::InvalidInput(
            "WAIC needs at least 2 draws (variance undefined)".into(),
        ));
    }
    let mut lppd = 0.0;
    let mut p_waic2 = 0.0;
    for col in loglik.columns() {
        let xs = col.to_vec();
        lppd += stats::log_mean_exp(&xs);
        p_waic2 += stats::variance(&xs);
    }
    Ok(-2.0 * lppd + 2.0 * p_waic2)
}

/// Growth ratio GR(k) = log(1 + λ̂_k/V(k)) / log(1 + λ̂_{k+1}/V(k+1)) with
/// V(k) = Σ_{j=k+1}^{n∧p} λ̂_j. Needs 1 <= k <= n∧p - 2.
pub fn growth_ratio(ss: &SampleSpectrum, k: usize) -> Result<f64> {
    let bound = ss.rank_bound();
    if k == 0 || k + 2 > bound {
        return Err(Error::InvalidInput(format!(
            "growth ratio needs 1 <= k <= n∧p - 2 = {}, got {k}",
            bound.saturating_sub(2)
        )));
    }
    let v = |m: usize| -> f64 { ss.eigenvalues.iter().skip(m).sum() };
    let v_k = v(k);
    let v_k1 = v(k + 1);
    if !(v_k > 0.0) || !(v_k1 > 0.0) {
        return Err(Error::Degenerate(format!(
            "residual eigenvalue sum vanishes at k = {k}"
        )));
    }
    let num = (1.0 + ss.eigenvalues[k - 1] / v_k).ln();
    let den = (1.0 + ss.eigenvalues[k] / v_k1).ln();
    Ok(num / den)
}

/// IC_p3(k) = log(‖X - X U₁U₁ᵀ‖_F² / (np)) + k log(n∧p)/(n∧p), with the
/// residual floored before the log.
pub fn ic_p3(x: &DataMatrix, u1: &ArrayView2<f64>) -> Result<f64> {
    let (n, p) = (x.n(), x.p());
    let k = u1.ncols();
    if u1.nrows() != p {
        return Err(Error::InvalidInput(
            "projection basis has wrong row count".into(),
        ));
    }
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
    let residual = if k == 0 {
        x.values().iter().map(|v| v * v).sum::<f64>()
    } else {
        let scores = x.values().dot(u1);
        let x_hat = scores.dot(&u1.t());
        x.values()
            .iter()
            .zip(x_hat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    let bound = n.min(p) as f64;
    let mean_residual = (residual / (n * p) as f64).max(IC_RESIDUAL_FLOOR);
    Ok(mean_residual.ln() + k as f64 * bound.ln() / bound)
}

/// Score every candidate k in 1..=k_max under the chosen criterion and pick
/// the winner (argmin for WAIC and IC_p3, argmax for GR; ties go to the
/// smallest k). WAIC runs one gSIW chain per candidate, each with its own
/// data-driven prior and the base seed offset by k.
pub fn select_k(
    x: &DataMatrix,
    criterion: SelectionCriterion,
    k_max: usize,
    ms: &McmcSettings,
) -> Result<SelectionResult> {
    let ss = sample_covariance(x)?;
    let bound = ss.rank_bound();
    if k_max == 0 || k_max + 2 > bound {
        return Err(Error::Config(format!(
            "k_max must lie in 1..={}, got {k_max}",
            bound.saturating_sub(2)
        )));
    }
    let scores: Vec<f64> = match criterion {
        SelectionCriterion::GrowthRatio => (1..=k_max)
            .map(|k| growth_ratio(&ss, k))
            .collect::<Result<_>>()?,
        SelectionCriterion::IcP3 => (1..=k_max)
            .map(|k| ic_p3(x, &ss.q.as_array().slice(s![.., ..k])))
            .collect::<Result<_>>()?,
        SelectionCriterion::Waic => (1..=k_max)
            .into_par_iter()
            .map(|k| {
                let cfg = gsiw_data_driven(&ss, k)?;
                let mut ms_k = ms.clone();
                ms_k.seed = ms.seed.wrapping_add(k as u64);
                let draws = run_chain(&ss, &cfg, &ms_k, Some(x))?;
                let ll = draws
                    .loglik
                    .as_ref()
                    .expect("chain was run with the data matrix");
                waic(&ll.view())
            })
            .collect::<Result<_>>()?,
    };
    let chosen_k = match criterion {
        SelectionCriterion::GrowthRatio => argbest(&scores, false),
        _ => argbest(&scores, true),
    } + 1;
    Ok(SelectionResult {
        criterion: criterion.name().to_string(),
        scores,
        chosen_k,
    })
}

fn argbest(scores: &[f64], minimize: bool) -> usize {
    let mut best = 0usize;
    for (i, &v) in scores.iter().enumerate() {
        let better = if minimize {
            v < scores[best]
        } else {
            v > scores[best]
        };
        if better {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::OrthoMatrix;
    use crate::model::{gen_spiked_data, SpikedScenario};
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;

    fn stub_spectrum(n: usize, p: usize, ev: &[f64]) -> SampleSpectrum {
        SampleSpectrum {
            n,
            p,
            eigenvalues: Array1::from(ev.to_vec()),
            q: OrthoMatrix::identity(p),
            trace: ev.iter().sum(),
        }
    }

    #[test]
    fn waic_hand_cases() {
        // identical draws: p_waic2 = 0, WAIC = -2 Σ loglik
        let ll = array![[-1.0, -2.0], [-1.0, -2.0]];
        assert!((waic(&ll.view()).unwrap() - 6.0).abs() < 1e-12);

        // two draws {0, 0}: lppd contribution 0
        let ll = array![[0.0], [0.0]];
        assert!(waic(&ll.view()).unwrap().abs() < 1e-12);

        // two draws {log 1, log 3}: lppd = log 2, variance = (log 3)^2 / 2
        let l3 = 3.0f64.ln();
        let ll = array![[0.0], [l3]];
        let expect = -2.0 * 2.0f64.ln() + 2.0 * (l3 * l3 / 2.0);
        assert!((waic(&ll.view()).unwrap() - expect).abs() < 1e-12);

        let single = array![[0.0]];
        assert!(waic(&single.view()).is_err());
    }

    #[test]
    fn waic_reorder_invariant() {
        let ll = array![[-1.0, -2.0, -0.5], [-1.5, -1.0, -0.7], [-0.9, -2.2, -0.4]];
        let base = waic(&ll.view()).unwrap();
        // permute draws
        let ll_d = array![[-0.9, -2.2, -0.4], [-1.0, -2.0, -0.5], [-1.5, -1.0, -0.7]];
        assert!((waic(&ll_d.view()).unwrap() - base).abs() < 1e-12);
        // permute observations
        let ll_o = array![[-0.5, -1.0, -2.0], [-0.7, -1.5, -1.0], [-0.4, -0.9, -2.2]];
        assert!((waic(&ll_o.view()).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn growth_ratio_hand_cases() {
        let ss = stub_spectrum(8, 4, &[8.0, 4.0, 2.0, 1.0]);
        let g1 = growth_ratio(&ss, 1).unwrap();
        let g2 = growth_ratio(&ss, 2).unwrap();
        assert!((g1 - 0.899_494_838_448_676_2).abs() < 1e-12);
        assert!((g2 - 0.771_243_749_161_422_2).abs() < 1e-12);
        assert!(g1 > g2);
        assert!(growth_ratio(&ss, 3).is_err());
        assert!(growth_ratio(&ss, 0).is_err());
    }

    #[test]
    fn growth_ratio_scale_invariant() {
        let ss = stub_spectrum(10, 5, &[9.0, 4.0, 2.0, 1.0, 0.5]);
        let scaled = stub_spectrum(10, 5, &[90.0, 40.0, 20.0, 10.0, 5.0]);
        for k in 1..=3 {
            let a = growth_ratio(&ss, k).unwrap();
            let b = growth_ratio(&scaled, k).unwrap();
            assert!((a - b).abs() < 1e-12, "k = {k}: {a} vs {b}");
        }
    }

    #[test]
    fn ic_p3_cases() {
        let mut rng = crate::sampler::ChainRng::seed_from_u64(3);
        let sc = SpikedScenario::new(12, 6, vec![8.0], 1.0).unwrap();
        let x = gen_spiked_data(&sc, &mut rng);
        let ss = sample_covariance(&x).unwrap();

        // k = 0: log of the mean square with no penalty
        let empty = Array2::<f64>::zeros((6, 0));
        let v0 = ic_p3(&x, &empty.view()).unwrap();
        let ms = x.values().iter().map(|v| v * v).sum::<f64>() / 72.0;
        assert!((v0 - ms.ln()).abs() < 1e-12);

        // residual term matches the dense projection oracle
        let k = 2;
        let u1 = ss.q.as_array().slice(s![.., ..k]);
        let val = ic_p3(&x, &u1).unwrap();
        let proj = u1.dot(&u1.t());
        let x_hat = x.values().dot(&proj);
        let res: f64 = x
            .values()
            .iter()
            .zip(x_hat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let bound = 6.0f64;
        let oracle = (res / 72.0).ln() + k as f64 * bound.ln() / bound;
        assert!((val - oracle).abs() < 1e-10);

        // U1 spanning the row space exactly: floored log
        let full = ss.q.as_array().slice(s![.., ..6]);
        let v_full = ic_p3(&x, &full).unwrap();
        assert!(v_full < IC_RESIDUAL_FLOOR.ln() + 7.0);
    }

    #[test]
    fn ic_p3_rotation_invariant_residual() {
        // right-multiplying U1 by a k x k orthogonal matrix leaves the
        // residual unchanged
        let mut rng = crate::sampler::ChainRng::seed_from_u64(5);
        let sc = SpikedScenario::new(10, 5, vec![7.0, 3.0], 1.0).unwrap();
        let x = gen_spiked_data(&sc, &mut rng);
        let ss = sample_covariance(&x).unwrap();
        let u1 = ss.q.as_array().slice(s![.., ..2]).to_owned();
        let r = crate::linalg::haar_sample(2, &mut rng);
        let rotated = u1.dot(r.as_array());
        let a = ic_p3(&x, &u1.view()).unwrap();
        let b = ic_p3(&x, &rotated.view()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn select_k_gr_and_bounds() {
        let mut rng = crate::sampler::ChainRng::seed_from_u64(7);
        let sc = SpikedScenario::new(30, 8, vec![50.0], 1.0).unwrap();
        let x = gen_spiked_data(&sc, &mut rng);
        let ms = McmcSettings::new(1);
        let res = select_k(&x, SelectionCriterion::GrowthRatio, 2, &ms).unwrap();
        assert_eq!(res.chosen_k, 1);
        assert_eq!(res.scores.len(), 2);

        assert!(select_k(&x, SelectionCriterion::GrowthRatio, 7, &ms).is_err());
    }
}
