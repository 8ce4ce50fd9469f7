//! Dense symmetric linear algebra primitives: full spectral decomposition
//! (cyclic Jacobi), closed-form 2x2 eigendecomposition with rotation angle,
//! signed Givens row rotations, re-orthonormalization by modified
//! Gram-Schmidt, and Haar-uniform orthogonal sampling.
//!
//! All matrices are dense `f64`; rows are contiguous (ndarray standard
//! layout), which keeps the row-pair rotations of the Gibbs sampler cheap.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Orthogonality tolerance enforced on every constructed [`OrthoMatrix`]:
/// the Frobenius norm of GᵀG - I may not exceed this.
pub const ORTHO_TOL: f64 = 1e-8;

/// A row sign in a signed Givens rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random::<bool>() {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }
}

/// Frobenius norm of MᵀM - I; zero for an exactly orthogonal matrix.
pub fn orthogonality_defect(m: &ArrayView2<f64>) -> f64 {
    let p = m.ncols();
    let gram = m.t().dot(m);
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Dense symmetric matrix. Storage is exactly symmetric: construction
/// averages A and Aᵀ after checking the asymmetry is within rounding.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    m: Array2<f64>,
}

impl SymMatrix {
    pub fn from_array(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square and nonempty, got {r}x{c}"
            )));
        }
        let mut scale: f64 = 0.0;
        for &v in a.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite matrix entry".into()));
            }
            scale = scale.max(v.abs());
        }
        let tol = 1e-10 * scale.max(1.0);
        for i in 0..r {
            for j in (i + 1)..r {
                if (a[(i, j)] - a[(j, i)]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut m = a;
        for i in 0..r {
            for j in (i + 1)..r {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self { m })
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        let mut m = Array2::zeros((d.len(), d.len()));
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        Self::from_array(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.m
    }
}

/// A p x p orthogonal matrix; `‖GᵀG - I‖_F <= ORTHO_TOL` holds at
/// construction and is maintained by the operations in this module.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoMatrix {
    m: Array2<f64>,
}

impl OrthoMatrix {
    pub fn identity(p: usize) -> Self {
        Self { m: Array2::eye(p) }
    }

    pub fn from_array(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidInput(
                "orthogonal matrix must be square".into(),
            ));
        }
        let defect = orthogonality_defect(&m.view());
        if !(defect <= ORTHO_TOL) {
            return Err(Error::Invariant(format!(
                "orthogonality defect {defect:.3e} exceeds {ORTHO_TOL:.0e}"
            )));
        }
        Ok(Self { m })
    }

    /// Wrap a matrix known to be orthogonal by construction (products of
    /// exact rotations, QR factors). Debug builds still verify.
    pub(crate) fn from_array_unchecked(m: Array2<f64>) -> Self {
        debug_assert!(orthogonality_defect(&m.view()) <= ORTHO_TOL);
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.m
    }

    /// Mutable access for crate-internal hot paths that preserve
    /// orthogonality structurally (exact rotation factors).
    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.m
    }

    pub fn into_array(self) -> Array2<f64> {
        self.m
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.m.column(j)
    }

    pub fn defect(&self) -> f64 {
        orthogonality_defect(&self.m.view())
    }

    /// Replace rows `i` and `j` by `diag(e1, e2) · R_theta` applied to the
    /// old rows; every other row is untouched. Orthogonality is preserved
    /// because the factor is itself orthogonal.
    pub fn apply_signed_rotation(
        &mut self,
        i: usize,
        j: usize,
        theta: f64,
        e1: Sign,
        e2: Sign,
    ) -> Result<()> {
        let p = self.dim();
        if i == j {
            return Err(Error::InvalidInput("rotation rows must differ".into()));
        }
        if i >= p || j >= p {
            return Err(Error::InvalidInput(format!(
                "row index out of range for dimension {p}"
            )));
        }
        let (ct, st) = (theta.cos(), theta.sin());
        let (f1, f2) = (e1.factor(), e2.factor());
        let (mut ri, mut rj) = self.m.multi_slice_mut((s![i, ..], s![j, ..]));
        for (gi, gj) in ri.iter_mut().zip(rj.iter_mut()) {
            let (a, b) = (*gi, *gj);
            *gi = f1 * (ct * a - st * b);
            *gj = f2 * (st * a + ct * b);
        }
        Ok(())
    }
}

/// Eigendecomposition of a 2x2 symmetric matrix [[a, b], [b, d]] as
/// `R_omega diag(s1, s2) R_omegaᵀ` with `s1 >= s2` and
/// `omega ∈ (-pi/2, pi/2]`.
#[derive(Clone, Copy, Debug)]
pub struct TwoByTwoEig {
    pub s1: f64,
    pub s2: f64,
    pub omega: f64,
}

pub fn eig2x2_with_angle(a: f64, b: f64, d: f64) -> TwoByTwoEig {
    let half_trace = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    // 2*omega = atan2(2b, a-d); atan2 lands in (-pi, pi] except for the
    // -pi corner with negative-zero y, folded back by periodicity of pi.
    let mut omega = 0.5 * f64::atan2(2.0 * b, a - d);
    if omega <= -std::f64::consts::FRAC_PI_2 {
        omega += std::f64::consts::PI;
    }
    TwoByTwoEig {
        s1: half_trace + disc,
        s2: half_trace - disc,
        omega,
    }
}

impl TwoByTwoEig {
    /// `R_omega diag(s1, s2) R_omegaᵀ`, for reconstruction checks.
    pub fn reconstruct(&self) -> [[f64; 2]; 2] {
        let (c, s) = (self.omega.cos(), self.omega.sin());
        let a = self.s1 * c * c + self.s2 * s * s;
        let b = (self.s1 - self.s2) * s * c;
        let d = self.s1 * s * s + self.s2 * c * c;
        [[a, b], [b, d]]
    }
}

/// Spectral decomposition `M = U Λ Uᵀ` with descending eigenvalues and the
/// aligned eigenvector columns of `U`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Array1<f64>,
    pub vectors: OrthoMatrix,
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Ties keep input order; each eigenvector's largest-magnitude entry is made
/// positive so the output is deterministic.
pub fn spectral_decompose(m: &SymMatrix) -> Spectrum {
    let (values, vectors) = jacobi_eigen(m.as_array());
    let (values, vectors) = sort_eigen_desc(values, vectors);
    Spectrum {
        eigenvalues: values,
        vectors: OrthoMatrix::from_array_unchecked(vectors),
    }
}

/// Cyclic Jacobi eigensolver on a symmetric matrix. Returns unsorted
/// eigenvalues and the accumulated rotation matrix (columns = eigenvectors).
fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let p = a.nrows();
    let mut a = a.clone();
    let mut v: Array2<f64> = Array2::eye(p);
    if p == 1 {
        return (Array1::from(vec![a[(0, 0)]]), v);
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = (1e-15 * frob.max(f64::MIN_POSITIVE)).powi(2);
    for _sweep in 0..64 {
        let off: f64 = {
            let mut acc = 0.0;
            for i in 0..p {
                for j in (i + 1)..p {
                    acc += 2.0 * a[(i, j)] * a[(i, j)];
                }
            }
            acc
        };
        if off <= stop {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let b = a[(i, j)];
                if b == 0.0 {
                    continue;
                }
                // Rutishauser's stable rotation zeroing a[i,j].
                let theta = 0.5 * (a[(j, j)] - a[(i, i)]) / b;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * b;
                a[(i, i)] -= h;
                a[(j, j)] += h;
                a[(i, j)] = 0.0;
                a[(j, i)] = 0.0;
                for k in 0..p {
                    if k != i && k != j {
                        let g = a[(k, i)];
                        let hh = a[(k, j)];
                        a[(k, i)] = g - s * (hh + tau * g);
                        a[(i, k)] = a[(k, i)];
                        a[(k, j)] = hh + s * (g - tau * hh);
                        a[(j, k)] = a[(k, j)];
                    }
                }
                for k in 0..p {
                    let g = v[(k, i)];
                    let hh = v[(k, j)];
                    v[(k, i)] = g - s * (hh + tau * g);
                    v[(k, j)] = hh + s * (g - tau * hh);
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// Stable descending sort of eigenpairs plus the deterministic sign fix.
fn sort_eigen_desc(values: Array1<f64>, vectors: Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let p = values.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .expect("finite eigenvalues")
    });
    let mut sv = Array1::zeros(p);
    let mut sm = Array2::zeros((p, p));
    for (rank, &idx) in order.iter().enumerate() {
        sv[rank] = values[idx];
        let col = vectors.column(idx);
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (k, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = k;
            }
        }
        let flip = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..p {
            sm[(k, rank)] = flip * col[k];
        }
    }
    (sv, sm)
}

/// QR orthogonal factor with positive diagonal on the triangular factor,
/// for floating-point drift control. Modified Gram-Schmidt with a second
/// orthogonalization pass; the column norms are positive, so the R diagonal
/// is positive by construction and an orthogonal input is a fixed point.
pub fn reorthonormalize(g: &ArrayView2<f64>) -> Result<OrthoMatrix> {
    let p = g.nrows();
    if p != g.ncols() || p == 0 {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    let defect = orthogonality_defect(g);
    if !(defect < 1e-3) {
        return Err(Error::Invariant(format!(
            "input too far from orthogonal: defect {defect:.3e} >= 1e-3"
        )));
    }
    let q = mgs_columns(&g.to_owned())?;
    Ok(OrthoMatrix::from_array_unchecked(q))
}

/// Double-pass modified Gram-Schmidt over the columns of a square matrix.
fn mgs_columns(g: &Array2<f64>) -> Result<Array2<f64>> {
    let p = g.nrows();
    let mut q = g.clone();
    for k in 0..p {
        for _pass in 0..2 {
            for l in 0..k {
                let proj = q.column(l).dot(&q.column(k));
                let prev = q.column(l).to_owned();
                let mut ck = q.column_mut(k);
                ck.scaled_add(-proj, &prev);
            }
        }
        let norm = q.column(k).dot(&q.column(k)).sqrt();
        if norm < 1e-12 {
            return Err(Error::Degenerate(format!(
                "column {k} is numerically dependent; cannot orthonormalize"
            )));
        }
        q.column_mut(k).mapv_inplace(|x| x / norm);
    }
    Ok(q)
}

/// Haar-uniform orthogonal matrix: QR of an iid standard Gaussian matrix.
/// Gram-Schmidt yields the factor with positive R diagonal, which is the
/// sign convention that makes the distribution exactly Haar.
pub fn haar_sample<R: Rng + ?Sized>(p: usize, rng: &mut R) -> OrthoMatrix {
    assert!(p >= 1, "dimension must be positive");
    let mut z = Array2::zeros((p, p));
    for x in z.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
    let q = mgs_columns(&z).expect("Gaussian matrix is almost surely full rank");
    OrthoMatrix::from_array_unchecked(q)
}

/// Extend a p x r matrix with orthonormal columns to a full p x p orthogonal
/// matrix. Candidates are the standard basis vectors in index order, so the
/// completion is deterministic.
pub fn complete_orthonormal_basis(cols: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let (p, r) = cols.dim();
    if r > p {
        return Err(Error::InvalidInput("more columns than rows".into()));
    }
    let mut q = Array2::zeros((p, p));
    q.slice_mut(s![.., ..r]).assign(cols);
    let mut have = r;
    for threshold in [0.5, 1e-8] {
        let mut cand = 0usize;
        while have < p && cand < p {
            let mut v = Array1::zeros(p);
            v[cand] = 1.0;
            for _pass in 0..2 {
                for l in 0..have {
                    let proj = q.column(l).dot(&v);
                    let col = q.column(l).to_owned();
                    v.scaled_add(-proj, &col);
                }
            }
            let norm = v.dot(&v).sqrt();
            if norm > threshold {
                v.mapv_inplace(|x| x / norm);
                q.column_mut(have).assign(&v);
                have += 1;
            }
            cand += 1;
        }
        if have == p {
            break;
        }
    }
    if have < p {
        return Err(Error::Degenerate(
            "could not complete orthonormal basis".into(),
        ));
    }
    Ok(q)
}
