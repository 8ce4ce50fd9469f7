//! Observation-data model: CSV ingestion, sample-covariance spectrum with
//! the Gram-matrix trick for p > n, synthetic spiked-data generation, and
//! Gaussian log-likelihood evaluation.
//!
//! The sample covariance is `S = XᵀX / n` (divisor n, mean-zero model);
//! column centering is opt-in and changes the effective model.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal_basis, spectral_decompose, OrthoMatrix, SymMatrix};

/// n x p observation matrix, rows = samples.
#[derive(Clone, Debug)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if p < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 variables, got {p}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite data entry".into()));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Subtract column means in place.
    pub fn center_columns(&mut self) {
        let n = self.n() as f64;
        let means: Vec<f64> = self
            .values
            .columns()
            .into_iter()
            .map(|c| c.sum() / n)
            .collect();
        for (j, m) in means.into_iter().enumerate() {
            self.values.column_mut(j).mapv_inplace(|v| v - m);
        }
    }
}

/// Options for [`load_matrix_csv`].
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Subtract column means after loading.
    pub center: bool,
}

/// Load a rectangular numeric CSV (UTF-8, comma-separated, `.` decimal
/// point). A non-numeric first row is treated as a header and skipped.
/// Parse failures name the 1-based physical row and column.
pub fn load_matrix_csv<P: AsRef<Path>>(path: P, options: LoadOptions) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::InvalidInput(format!("cannot open CSV: {e}")))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::InvalidInput(format!("CSV read error: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue; // blank line
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Parse {
                    row,
                    col: record.len().min(w) + 1,
                    msg: format!("row has {} fields, expected {w}", record.len()),
                });
            }
        }
        let mut parsed = Vec::with_capacity(record.len());
        let mut failed_at: Option<usize> = None;
        for (j, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    failed_at = Some(j + 1);
                    break;
                }
            }
        }
        match failed_at {
            None => {
                width.get_or_insert(record.len());
                rows.push(parsed);
            }
            Some(col) => {
                // An unparsable first row is an auto-detected header.
                if rows.is_empty() && width.is_none() {
                    width = Some(record.len());
                } else {
                    return Err(Error::Parse {
                        row,
                        col,
                        msg: format!("cannot parse '{}' as a finite number", &record[col - 1]),
                    });
                }
            }
        }
    }

    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 data rows, found {n}"
        )));
    }
    let p = rows[0].len();
    let mut values = Array2::zeros((n, p));
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r.into_iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    let mut data = DataMatrix::new(values)?;
    if options.center {
        data.center_columns();
    }
    Ok(data)
}

/// Spectrum of the sample covariance S = XᵀX/n: the n∧p leading eigenvalues
/// (descending, nonnegative) and a full p x p orthonormal Q whose first n∧p
/// columns are the corresponding eigenvectors.
#[derive(Clone, Debug)]
pub struct SampleSpectrum {
    pub n: usize,
    pub p: usize,
    pub eigenvalues: Array1<f64>,
    pub q: OrthoMatrix,
    pub trace: f64,
}

impl SampleSpectrum {
    /// Diagonal of W = diag(n λ̂_1, ..., n λ̂_{n∧p}, 0, ..., 0), length p.
    pub fn w_diag(&self) -> Array1<f64> {
        let mut w = Array1::zeros(self.p);
        for (i, &lam) in self.eigenvalues.iter().enumerate() {
            w[i] = self.n as f64 * lam;
        }
        w
    }

    pub fn rank_bound(&self) -> usize {
        self.n.min(self.p)
    }
}

/// Eigenvalues and eigenvectors of S via the route appropriate for the
/// shape: direct p x p decomposition when p <= n, otherwise the n x n Gram
/// matrix XXᵀ/n with eigenvectors lifted by v = Xᵀu / ‖Xᵀu‖.
pub fn sample_covariance(x: &DataMatrix) -> Result<SampleSpectrum> {
    let (n, p) = (x.n(), x.p());
    let trace = x.values().iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p <= n {
        let s_mat = x.values().t().dot(x.values()) / n as f64;
        let sp = spectral_decompose(&SymMatrix::from_array(s_mat)?);
        let eigenvalues = sp.eigenvalues.mapv(|v| v.max(0.0));
        Ok(SampleSpectrum {
            n,
            p,
            eigenvalues,
            q: sp.vectors,
            trace,
        })
    } else {
        let (values, lifted) = gram_eigenpairs(x, n.min(p))?;
        let q = complete_orthonormal_basis(&lifted.view())?;
        Ok(SampleSpectrum {
            n,
            p,
            eigenvalues: values,
            q: OrthoMatrix::from_array(q)?,
            trace,
        })
    }
}

/// Leading `k` sample eigenpairs without completing the basis; used where
/// only the top of the spectrum matters (asymptotics checks at large p).
pub fn leading_sample_eigenpairs(x: &DataMatrix, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, p) = (x.n(), x.p());
    let bound = n.min(p);
    if k > bound {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs, only {bound} available"
        )));
    }
    if p <= n {
        let s_mat = x.values().t().dot(x.values()) / n as f64;
        let sp = spectral_decompose(&SymMatrix::from_array(s_mat)?);
        let values = sp.eigenvalues.slice(s![..k]).mapv(|v| v.max(0.0));
        let vectors = sp.vectors.as_array().slice(s![.., ..k]).to_owned();
        Ok((values, vectors))
    } else {
        let (values, lifted) = gram_eigenpairs(x, bound)?;
        Ok((
            values.slice(s![..k]).to_owned(),
            lifted.slice(s![.., ..k]).to_owned(),
        ))
    }
}

/// Gram-route eigenpairs: eigenvalues (length `count`, descending, clamped
/// at zero) and the lifted, re-orthonormalized, sign-fixed p x count
/// eigenvector block.
fn gram_eigenpairs(x: &DataMatrix, count: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, p) = (x.n(), x.p());
    let gram = x.values().dot(&x.values().t()) / n as f64;
    let sp = spectral_decompose(&SymMatrix::from_array(gram)?);
    let values: Array1<f64> = sp.eigenvalues.slice(s![..count]).mapv(|v| v.max(0.0));
    let top = values.first().copied().unwrap_or(0.0);
    let lift_floor = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut lifted = Array2::zeros((p, count));
    let mut lifted_cols = 0usize;
    for l in 0..count {
        let mu = values[l];
        if mu <= lift_floor {
            break; // numerically zero; the basis completion fills these in
        }
        let u = sp.vectors.column(l);
        // ‖Xᵀu‖ = sqrt(n mu)
        let mut v = x.values().t().dot(&u);
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|t| t / norm);
        lifted.column_mut(l).assign(&v);
        lifted_cols = l + 1;
    }
    let mut block = lifted.slice(s![.., ..lifted_cols]).to_owned();
    reorthonormalize_block(&mut block);
    sign_fix_columns(&mut block);
    if lifted_cols < count {
        // Zero eigenvalues: borrow orthonormal directions from completion.
        let full = complete_orthonormal_basis(&block.view())?;
        let mut out = Array2::zeros((p, count));
        out.slice_mut(s![.., ..lifted_cols]).assign(&block);
        out.slice_mut(s![.., lifted_cols..count])
            .assign(&full.slice(s![.., lifted_cols..count]));
        Ok((values, out))
    } else {
        Ok((values, block))
    }
}

/// Double-pass Gram-Schmidt over an already nearly-orthonormal block.
fn reorthonormalize_block(block: &mut Array2<f64>) {
    let r = block.ncols();
    for k in 0..r {
        for _pass in 0..2 {
            for l in 0..k {
                let proj = block.column(l).dot(&block.column(k));
                let prev = block.column(l).to_owned();
                block.column_mut(k).scaled_add(-proj, &prev);
            }
        }
        let norm = block.column(k).dot(&block.column(k)).sqrt();
        if norm > 0.0 {
            block.column_mut(k).mapv_inplace(|x| x / norm);
        }
    }
}

fn sign_fix_columns(block: &mut Array2<f64>) {
    for mut col in block.columns_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (k, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = k;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// Synthetic spiked-covariance scenario: Σ₀ = diag(spikes, base, ..., base).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SpikedScenario {
    pub n: usize,
    pub p: usize,
    pub spikes: Vec<f64>,
    pub base: f64,
}

impl SpikedScenario {
    pub fn new(n: usize, p: usize, spikes: Vec<f64>, base: f64) -> Result<Self> {
        if n < 2 || p < 2 {
            return Err(Error::InvalidInput("need n >= 2 and p >= 2".into()));
        }
        if !(base > 0.0) {
            return Err(Error::InvalidInput("base level must be positive".into()));
        }
        if spikes.len() >= n.min(p) {
            return Err(Error::InvalidInput(format!(
                "spike count {} must be below n∧p = {}",
                spikes.len(),
                n.min(p)
            )));
        }
        for w in spikes.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::InvalidInput(
                    "spikes must be strictly descending".into(),
                ));
            }
        }
        if let Some(&last) = spikes.last() {
            if !(last > base) {
                return Err(Error::InvalidInput(
                    "every spike must exceed the base level".into(),
                ));
            }
        }
        Ok(Self { n, p, spikes, base })
    }

    pub fn k(&self) -> usize {
        self.spikes.len()
    }

    /// True eigenvalues λ_{0,1} >= ... >= λ_{0,p}.
    pub fn true_eigenvalues(&self) -> Array1<f64> {
        let mut v = Array1::from_elem(self.p, self.base);
        for (i, &s) in self.spikes.iter().enumerate() {
            v[i] = s;
        }
        v
    }
}

/// Draw n iid rows from N(0, diag(spikes, base, ..., base)). The fill order
/// (row-major, one standard normal per cell) is fixed, so output is
/// bit-reproducible for a given RNG stream.
pub fn gen_spiked_data<R: Rng + ?Sized>(sc: &SpikedScenario, rng: &mut R) -> DataMatrix {
    let sd: Vec<f64> = sc.true_eigenvalues().iter().map(|v| v.sqrt()).collect();
    let mut values = Array2::zeros((sc.n, sc.p));
    for i in 0..sc.n {
        for j in 0..sc.p {
            let z: f64 = StandardNormal.sample(rng);
            values[(i, j)] = z * sd[j];
        }
    }
    DataMatrix { values }
}

/// Gaussian log-density log N(x; 0, U diag(λ) Uᵀ):
/// -(p log 2π + Σ log λ_i + Σ (Uᵀx)_i² / λ_i) / 2.
pub fn gauss_loglik(x: &ArrayView1<f64>, lambda: &ArrayView1<f64>, u: &OrthoMatrix) -> Result<f64> {
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput(
            "log-likelihood requires strictly positive eigenvalues".into(),
        ));
    }
    let z = u.as_array().t().dot(x);
    Ok(gauss_loglik_rotated(&z.view(), lambda))
}

/// Same density with the rotated coordinates z = Uᵀx already in hand.
pub fn gauss_loglik_rotated(z: &ArrayView1<f64>, lambda: &ArrayView1<f64>) -> f64 {
    let p = lambda.len() as f64;
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for (&zi, &li) in z.iter().zip(lambda.iter()) {
        logdet += li.ln();
        quad += zi * zi / li;
    }
    -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}
