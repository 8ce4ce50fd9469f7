//! Gibbs sampler for the posterior over (Λ, Γ).
//!
//! One sweep draws every eigenvalue from its conditional (exact
//! inverse-gamma when b = 1, independence-Metropolis corrected for the
//! eigenvalue-gap Jacobian when b = 0), then traverses row pairs of Γ with
//! signed Givens rotations. The rotation angle works through
//! α = cos²(θ + ω), whose conditional is a tilted Beta(1/2, 1/2) with
//! nonpositive tilt c = -|(s₁ - s₂)(h₁ - h₂)|/2; large |c| is handled by a
//! von Mises reformulation (ψ = 2(θ+ω) has density ∝ exp((|c|/2)cos(ψ-π)))
//! with the Best-Fisher wrapped-Cauchy rejection sampler, so the rejection
//! cost stays bounded for all tilts.

use ndarray::{azip, s, Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig2x2_with_angle, reorthonormalize, OrthoMatrix, Sign};
use crate::model::{gauss_loglik_rotated, DataMatrix, SampleSpectrum};
use crate::prior::PriorConfig;

/// RNG used by every chain; seeded explicitly for reproducibility.
pub type ChainRng = ChaCha8Rng;

/// How row pairs are visited within one sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSchedule {
    /// All p(p-1)/2 pairs in lexicographic order.
    FullLexicographic,
    /// `m` uniformly chosen pairs per sweep.
    RandomScan(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    /// Sweeps between re-orthonormalizations of Γ.
    pub reorth_every: usize,
    pub seed: u64,
    pub pair_schedule: PairSchedule,
}

impl McmcSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            burn_in: 500,
            draws: 2000,
            thin: 1,
            reorth_every: 100,
            seed,
            pair_schedule: PairSchedule::FullLexicographic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draw count must be positive".into()));
        }
        if self.thin == 0 || self.reorth_every == 0 {
            return Err(Error::Config(
                "thin and reorth_every must be positive".into(),
            ));
        }
        if let PairSchedule::RandomScan(m) = self.pair_schedule {
            if m == 0 {
                return Err(Error::Config("random scan needs at least one pair".into()));
            }
        }
        Ok(())
    }
}

/// Current chain position: rotated eigenvector coordinates Γ, unordered
/// eigenvalues λ, and the cached diagonal c of Γᵀ(hI + W)Γ.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub gamma: OrthoMatrix,
    pub lambda: Array1<f64>,
    pub c: Array1<f64>,
}

impl ChainState {
    /// Start at the sample eigenbasis: Γ = I and λ at the conditional
    /// posterior means c_i / (n + 2a_i - 4).
    pub fn init(ss: &SampleSpectrum, cfg: &PriorConfig) -> Result<Self> {
        if cfg.dim() != ss.p {
            return Err(Error::Config(format!(
                "prior dimension {} does not match data dimension {}",
                cfg.dim(),
                ss.p
            )));
        }
        if cfg.k >= ss.rank_bound() {
            return Err(Error::Config(format!(
                "spike count {} must be below n∧p = {}",
                cfg.k,
                ss.rank_bound()
            )));
        }
        let gamma = OrthoMatrix::identity(ss.p);
        let c = compute_c(&gamma, ss, cfg.h);
        let n = ss.n as f64;
        let lambda = Array1::from_iter(
            c.iter()
                .zip(cfg.a.iter())
                .map(|(&ci, &ai)| ci / (n + 2.0 * ai - 4.0)),
        );
        Ok(Self { gamma, lambda, c })
    }
}

/// Diagonal of Γᵀ(hI + W)Γ: c_i = h + Σ_j Γ_{ji}² w_j. Rows with zero
/// weight contribute nothing, so only the first n∧p rows are visited.
pub fn compute_c(gamma: &OrthoMatrix, ss: &SampleSpectrum, h: f64) -> Array1<f64> {
    compute_c_w(gamma, &ss.w_diag(), h)
}

fn compute_c_w(gamma: &OrthoMatrix, w: &Array1<f64>, h: f64) -> Array1<f64> {
    let p = gamma.dim();
    let mut c = Array1::from_elem(p, h);
    for (j, &wj) in w.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        let row = gamma.as_array().row(j);
        azip!((ci in &mut c, &g in &row) *ci += g * g * wj);
    }
    c
}

/// One draw from InvGamma(shape, scale) with density ∝ x^{-shape-1} e^{-scale/x}.
pub(crate) fn draw_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

/// Update every eigenvalue from its conditional given Γ. Exact
/// inverse-gamma draws for b = 1; for b = 0 an independence Metropolis step
/// with the same proposal and acceptance Π_{j≠i} |λ*-λ_j| / |λ_i-λ_j|,
/// which accounts for the Jacobian factor Π|λ_i-λ_j|^{1-b}.
pub fn sample_lambda_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    cfg: &PriorConfig,
    n: usize,
    rng: &mut R,
) -> Result<()> {
    let nf = n as f64;
    let p = state.lambda.len();
    for i in 0..p {
        let ci = state.c[i];
        if !(ci > 0.0) {
            return Err(Error::Invariant(format!("nonpositive c[{i}] = {ci}")));
        }
        let shape = cfg.a[i] + nf / 2.0 - 1.0;
        let proposal = draw_inv_gamma(shape, ci / 2.0, rng);
        if cfg.b == 1 {
            state.lambda[i] = proposal;
        } else {
            let log_ratio = repulsion_log_ratio(&state.lambda, i, proposal);
            if log_ratio >= 0.0 || rng.random::<f64>().max(1e-300).ln() < log_ratio {
                state.lambda[i] = proposal;
            }
        }
    }
    Ok(())
}

/// log Π_{j≠i} |proposal - λ_j| / |λ_i - λ_j|; +∞ favors acceptance when the
/// current value sits on a repulsion zero.
fn repulsion_log_ratio(lambda: &Array1<f64>, i: usize, proposal: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &lj) in lambda.iter().enumerate() {
        if j == i {
            continue;
        }
        num += (proposal - lj).abs().ln();
        den += (lambda[i] - lj).abs().ln();
    }
    if den == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    num - den
}

/// Draw α ∈ (0, 1) with density ∝ exp(cα) α^{-1/2} (1-α)^{-1/2}, c <= 0.
///
/// |c| <= 1 uses plain rejection from the Beta(1/2,1/2) proposal (acceptance
/// exp(cα) >= e^{-1}); larger tilts switch to the von Mises route.
pub fn sample_tilted_beta<R: Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    if c > 0.0 {
        return Err(Error::InvalidInput(format!(
            "tilt must be nonpositive, got {c}"
        )));
    }
    if c >= -1.0 {
        loop {
            let u: f64 = rng.random();
            let alpha = (std::f64::consts::FRAC_PI_2 * u).sin().powi(2);
            let accept: f64 = rng.random();
            if accept.max(1e-300).ln() < c * alpha {
                return Ok(alpha);
            }
        }
    }
    // ψ = 2(θ+ω) shifted by π is von Mises with concentration |c|/2.
    let psi = sample_von_mises_centered(-c / 2.0, rng);
    Ok(0.5 * (1.0 - psi.cos()))
}

/// Best-Fisher rejection sampler for the von Mises distribution with mean 0
/// and concentration kappa > 0; returns a draw in [-π, π].
fn sample_von_mises_centered<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (std::f64::consts::PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random::<f64>().max(1e-300);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let sign = if u3 < 0.5 { -1.0 } else { 1.0 };
            return sign * f.clamp(-1.0, 1.0).acos();
        }
    }
}

/// 2x2 pair summary: A = Γ_{rows i,j} Λ⁻¹ Γ_{rows i,j}ᵀ decomposed with its
/// rotation angle, and the resulting nonpositive tilt.
pub(crate) fn pair_params(
    state: &ChainState,
    i: usize,
    j: usize,
    h: f64,
    w: &Array1<f64>,
    inv_lambda: &Array1<f64>,
) -> (crate::linalg::TwoByTwoEig, f64) {
    let gi = state.gamma.as_array().row(i);
    let gj = state.gamma.as_array().row(j);
    let mut a11 = 0.0;
    let mut a12 = 0.0;
    let mut a22 = 0.0;
    azip!((&x in &gi, &y in &gj, &il in inv_lambda) {
        a11 += x * x * il;
        a12 += x * y * il;
        a22 += y * y * il;
    });
    let eig = eig2x2_with_angle(a11, a12, a22);
    let h1 = h + w[i];
    let h2 = h + w[j];
    let tilt = -0.5 * ((eig.s1 - eig.s2) * (h1 - h2)).abs();
    (eig, tilt)
}

/// Per-pair log conditional density kernel at angle `theta` with the given
/// signs: -tr(H₁ R Γ₁ Λ⁻¹ Γ₁ᵀ Rᵀ)/2 where R = diag(ε₁,ε₂) R_θ. Used to test
/// that the density depends on θ only through cos²(θ+ω).
pub fn pair_log_target(
    state: &ChainState,
    i: usize,
    j: usize,
    h: f64,
    w: &Array1<f64>,
    theta: f64,
    e1: Sign,
    e2: Sign,
) -> f64 {
    let gi = state.gamma.as_array().row(i);
    let gj = state.gamma.as_array().row(j);
    let (ct, st) = (theta.cos(), theta.sin());
    let (f1, f2) = (e1.factor(), e2.factor());
    let mut t11 = 0.0;
    let mut t22 = 0.0;
    azip!((&x in &gi, &y in &gj, &l in &state.lambda) {
        let r1 = f1 * (ct * x - st * y);
        let r2 = f2 * (st * x + ct * y);
        t11 += r1 * r1 / l;
        t22 += r2 * r2 / l;
    });
    -0.5 * ((h + w[i]) * t11 + (h + w[j]) * t22)
}

/// Resample the signed Givens rotation for rows i < j of Γ and apply it,
/// keeping the c cache coherent.
pub fn sample_pair_rotation<R: Rng + ?Sized>(
    state: &mut ChainState,
    i: usize,
    j: usize,
    h: f64,
    w: &Array1<f64>,
    rng: &mut R,
) -> Result<()> {
    if state.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Invariant(
            "nonpositive eigenvalue in chain state".into(),
        ));
    }
    let inv_lambda = state.lambda.mapv(|l| 1.0 / l);
    pair_rotation_with_inv(state, i, j, h, w, &inv_lambda, rng)
}

fn pair_rotation_with_inv<R: Rng + ?Sized>(
    state: &mut ChainState,
    i: usize,
    j: usize,
    h: f64,
    w: &Array1<f64>,
    inv_lambda: &Array1<f64>,
    rng: &mut R,
) -> Result<()> {
    if i >= j {
        return Err(Error::InvalidInput(format!(
            "pair rotation requires i < j, got ({i}, {j})"
        )));
    }
    // Equal weights make h1 = h2, so the tilt vanishes for any Λ and the
    // angle conditional is flat: θ uniform on (-π/2, π/2], no spectral
    // decomposition needed.
    let theta = if w[i] == w[j] {
        std::f64::consts::FRAC_PI_2 * (2.0 * rng.random::<f64>() - 1.0)
    } else {
        let (eig, tilt) = pair_params(state, i, j, h, w, inv_lambda);
        let alpha = sample_tilted_beta(tilt, rng)?;
        let phi_mag = alpha.sqrt().clamp(0.0, 1.0).acos();
        let phi = if rng.random::<bool>() {
            phi_mag
        } else {
            -phi_mag
        };
        wrap_half_pi(phi - eig.omega)
    };
    let e1 = Sign::random(rng);
    let e2 = Sign::random(rng);

    // Fused rotation + incremental c update. A row-pair rotation changes
    // rows i and j in every column m, shifting c_m by
    // (w_i - w_j)(Γ'_{im}² - Γ_{im}²); the pair-norm per column is invariant.
    let (ct, st) = (theta.cos(), theta.sin());
    let (f1, f2) = (e1.factor(), e2.factor());
    let w_diff = w[i] - w[j];
    let gamma = state.gamma.as_array_mut();
    let (mut ri, mut rj) = gamma.multi_slice_mut((s![i, ..], s![j, ..]));
    if w_diff == 0.0 {
        azip!((gi in &mut ri, gj in &mut rj) {
            let (a, b) = (*gi, *gj);
            *gi = f1 * (ct * a - st * b);
            *gj = f2 * (st * a + ct * b);
        });
    } else {
        azip!((gi in &mut ri, gj in &mut rj, cm in &mut state.c) {
            let (a, b) = (*gi, *gj);
            let ngi = f1 * (ct * a - st * b);
            *gi = ngi;
            *gj = f2 * (st * a + ct * b);
            *cm += w_diff * (ngi * ngi - a * a);
        });
    }
    Ok(())
}

/// Map an angle into (-π/2, π/2] by shifting multiples of π; R_{θ±π} differs
/// from R_θ only by a global sign, which the ε draws absorb.
fn wrap_half_pi(mut theta: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    while theta > FRAC_PI_2 {
        theta -= PI;
    }
    while theta <= -FRAC_PI_2 {
        theta += PI;
    }
    theta
}

/// One Gibbs sweep: refresh the c cache, draw Λ, then run the pair pass.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    schedule: PairSchedule,
    cfg: &PriorConfig,
    ss: &SampleSpectrum,
    rng: &mut R,
) -> Result<()> {
    let w = ss.w_diag();
    gibbs_sweep_w(state, schedule, cfg, ss.n, &w, rng)
}

fn gibbs_sweep_w<R: Rng + ?Sized>(
    state: &mut ChainState,
    schedule: PairSchedule,
    cfg: &PriorConfig,
    n: usize,
    w: &Array1<f64>,
    rng: &mut R,
) -> Result<()> {
    state.c = compute_c_w(&state.gamma, w, cfg.h);
    sample_lambda_step(state, cfg, n, rng)?;
    let inv_lambda = state.lambda.mapv(|l| 1.0 / l);
    let p = state.gamma.dim();
    match schedule {
        PairSchedule::FullLexicographic => {
            for i in 0..p.saturating_sub(1) {
                for j in (i + 1)..p {
                    pair_rotation_with_inv(state, i, j, cfg.h, w, &inv_lambda, rng)?;
                }
            }
        }
        PairSchedule::RandomScan(m) => {
            for _ in 0..m {
                let i = rng.random_range(0..p);
                let mut j = rng.random_range(0..p - 1);
                if j >= i {
                    j += 1;
                }
                let (i, j) = (i.min(j), i.max(j));
                pair_rotation_with_inv(state, i, j, cfg.h, w, &inv_lambda, rng)?;
            }
        }
    }
    Ok(())
}

/// Retained posterior draws: per-draw descending eigenvalues, the k leading
/// eigenvectors of Σ (columns of U = QΓ matched to the k largest λ), and
/// per-observation log-likelihoods when the data matrix was supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub sorted_lambda: Array2<f64>,
    /// draws x p x k; `top_vectors[[d, .., r]]` is the rank-r eigenvector.
    pub top_vectors: Array3<f64>,
    pub loglik: Option<Array2<f64>>,
    pub settings: McmcSettings,
    pub n: usize,
    pub p: usize,
    pub k: usize,
}

impl PosteriorDraws {
    pub fn draw_count(&self) -> usize {
        self.sorted_lambda.nrows()
    }

    /// Rank-r (0-based) eigenvector of draw d.
    pub fn vector(&self, d: usize, r: usize) -> ndarray::ArrayView1<'_, f64> {
        self.top_vectors.slice(s![d, .., r])
    }

    /// Summary JSON: dimensions, settings echo, and per-rank eigenvalue
    /// posterior means.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            n: usize,
            p: usize,
            k: usize,
            retained_draws: usize,
            settings: &'a McmcSettings,
            lambda_mean: Vec<f64>,
        }
        let retained = self.draw_count();
        let lambda_mean = (0..self.p)
            .map(|i| self.sorted_lambda.column(i).sum() / retained as f64)
            .collect();
        Ok(serde_json::to_string_pretty(&Summary {
            n: self.n,
            p: self.p,
            k: self.k,
            retained_draws: retained,
            settings: &self.settings,
            lambda_mean,
        })?)
    }

    /// Flat CSV, one row per draw: sorted eigenvalues, then each retained
    /// eigenvector in rank order.
    pub fn write_draws_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.p).map(|i| format!("lambda_{i}")).collect();
        for r in 1..=self.k {
            for i in 1..=self.p {
                header.push(format!("xi{r}_{i}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for d in 0..self.draw_count() {
            let mut fields: Vec<String> = self
                .sorted_lambda
                .row(d)
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            for r in 0..self.k {
                fields.extend(self.vector(d, r).iter().map(|v| format!("{v}")));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Run one chain: burn-in, then retain every `thin`-th of `draws` sweeps.
/// Γ starts at the identity (the sample eigenbasis) and λ at the
/// conditional posterior means; Γ is re-orthonormalized every
/// `reorth_every` sweeps.
pub fn run_chain(
    ss: &SampleSpectrum,
    cfg: &PriorConfig,
    ms: &McmcSettings,
    x: Option<&DataMatrix>,
) -> Result<PosteriorDraws> {
    ms.validate()?;
    let mut state = ChainState::init(ss, cfg)?;
    let (n, p, k) = (ss.n, ss.p, cfg.k);
    let w = ss.w_diag();
    let mut rng = ChainRng::seed_from_u64(ms.seed);

    // Rotated observations y_i = Qᵀ x_i, so per-draw likelihoods need only Γ.
    let y = match x {
        Some(data) => {
            if data.n() != n || data.p() != p {
                return Err(Error::Config(
                    "data matrix does not match the spectrum".into(),
                ));
            }
            Some(data.values().dot(ss.q.as_array()))
        }
        None => None,
    };

    let retained = ms.draws / ms.thin;
    let mut sorted_lambda = Array2::zeros((retained, p));
    let mut top_vectors = Array3::zeros((retained, p, k));
    let mut loglik = y.as_ref().map(|_| Array2::zeros((retained, n)));

    let mut stored = 0usize;
    let total = ms.burn_in + ms.draws;
    for sweep in 1..=total {
        gibbs_sweep_w(&mut state, ms.pair_schedule, cfg, n, &w, &mut rng)?;
        if sweep.is_multiple_of(ms.reorth_every) {
            state.gamma = reorthonormalize(&state.gamma.as_array().view())?;
            state.c = compute_c_w(&state.gamma, &w, cfg.h);
        }
        if sweep > ms.burn_in && (sweep - ms.burn_in).is_multiple_of(ms.thin) && stored < retained {
            record_draw(
                &state,
                ss,
                k,
                stored,
                &mut sorted_lambda,
                &mut top_vectors,
                y.as_ref(),
                loglik.as_mut(),
            );
            stored += 1;
        }
    }

    Ok(PosteriorDraws {
        sorted_lambda,
        top_vectors,
        loglik,
        settings: ms.clone(),
        n,
        p,
        k,
    })
}

#[allow(clippy::too_many_arguments)]
fn record_draw(
    state: &ChainState,
    ss: &SampleSpectrum,
    k: usize,
    row: usize,
    sorted_lambda: &mut Array2<f64>,
    top_vectors: &mut Array3<f64>,
    y: Option<&Array2<f64>>,
    loglik: Option<&mut Array2<f64>>,
) {
    let p = state.lambda.len();
    // Descending order; ties keep the original coordinate index.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        state.lambda[b]
            .partial_cmp(&state.lambda[a])
            .expect("finite λ")
    });
    for (rank, &idx) in order.iter().enumerate() {
        sorted_lambda[(row, rank)] = state.lambda[idx];
    }
    for (rank, &idx) in order.iter().take(k).enumerate() {
        // eigenvector of Σ: U = QΓ, column idx
        let u_col = ss.q.as_array().dot(&state.gamma.column(idx));
        top_vectors.slice_mut(s![row, .., rank]).assign(&u_col);
    }
    if let (Some(y), Some(ll)) = (y, loglik) {
        for (obs, y_row) in y.rows().into_iter().enumerate() {
            // z = Γᵀ y pairs coordinate m with λ_m
            let z = y_row.dot(state.gamma.as_array());
            ll[(row, obs)] = gauss_loglik_rotated(&z.view(), &state.lambda.view());
        }
    }
}
