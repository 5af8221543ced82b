//! Dense linear-algebra primitives.
//!
//! All matrices are `nalgebra::DMatrix<f64>`, stored column-major. Thin
//! SVD, pseudoinverse and symmetric eigendecomposition share one rank
//! cutoff rule: singular values `σ_i <= max(m, n) * ε * σ_1` are treated as
//! zero unless a [`RankCutoff`] says otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// How small a singular value must be to count as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum RankCutoff {
    /// `max(m, n) * f64::EPSILON * σ_1`.
    #[default]
    Default,
    /// `tol * σ_1`.
    Relative(f64),
    /// Fixed threshold.
    Absolute(f64),
}

impl RankCutoff {
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match *self {
            RankCutoff::Default => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            RankCutoff::Relative(tol) => tol * sigma_max,
            RankCutoff::Absolute(tol) => tol,
        }
    }
}

/// Condensed SVD `A = U diag(σ) Vᵀ` keeping only singular values above the cutoff.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// `m x ρ`, orthonormal columns.
    pub u: Matrix,
    /// Descending, length ρ.
    pub singular_values: Vector,
    /// `n x ρ`, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// `V diag(1/σ) Uᵀ`.
    pub fn pinv(&self) -> Matrix {
        let mut vs = self.v.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            vs.column_mut(j).scale_mut(1.0 / *s);
        }
        vs * self.u.transpose()
    }

    /// Keeps the leading `k` triplets (or all of them if the rank is smaller).
    pub fn truncated(&self, k: usize) -> ThinSvd {
        let r = k.min(self.rank());
        ThinSvd {
            u: self.u.columns(0, r).into_owned(),
            singular_values: self.singular_values.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        }
    }
}

/// Eigendecomposition of a symmetric matrix, values sorted by descending magnitude.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub vectors: Matrix,
    pub values: Vector,
}

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} contains non-finite entries"
        )))
    }
}

fn faer_mat(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

// Decompositions run through faer; nalgebra's own SVD can return wrong
// factors on exactly rank-deficient inputs.
fn faer_thin_svd(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let svd = faer_mat(a)
        .thin_svd()
        .map_err(|e| Error::InvalidInput(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((from_faer(svd.U()), values, from_faer(svd.V())))
}

fn faer_sym_eigen(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let eig = faer_mat(a)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((from_faer(eig.U()), values))
}

pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    thin_svd_with(a, RankCutoff::Default)
}

pub fn thin_svd_with(a: &Matrix, cutoff: RankCutoff) -> Result<ThinSvd> {
    ensure_finite(a, "matrix")?;
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(ThinSvd {
            u: Matrix::zeros(m, 0),
            singular_values: Vector::zeros(0),
            v: Matrix::zeros(n, 0),
        });
    }
    let (u, sv, v) = faer_thin_svd(a)?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let sigma_max = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let tol = cutoff.threshold(m, n, sigma_max);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > tol && sv[i] > 0.0)
        .collect();

    let r = kept.len();
    let mut out_u = Matrix::zeros(m, r);
    let mut out_v = Matrix::zeros(n, r);
    let mut out_s = Vector::zeros(r);
    for (dst, &src) in kept.iter().enumerate() {
        out_u.set_column(dst, &u.column(src));
        out_v.set_column(dst, &v.column(src));
        out_s[dst] = sv[src];
    }
    Ok(ThinSvd {
        u: out_u,
        singular_values: out_s,
        v: out_v,
    })
}

/// Moore-Penrose inverse.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    pinv_with(a, RankCutoff::Default)
}

pub fn pinv_with(a: &Matrix, cutoff: RankCutoff) -> Result<Matrix> {
    let svd = thin_svd_with(a, cutoff)?;
    if svd.rank() == 0 {
        return Ok(Matrix::zeros(a.ncols(), a.nrows()));
    }
    Ok(svd.pinv())
}

pub fn numerical_rank(a: &Matrix) -> Result<usize> {
    Ok(thin_svd(a)?.rank())
}

/// Closest rank-`k` approximation in Frobenius and spectral norm.
pub fn best_rank_k(a: &Matrix, k: usize) -> Result<Matrix> {
    let max = a.nrows().min(a.ncols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { k, min: 1, max });
    }
    Ok(thin_svd(a)?.truncated(k).reconstruct())
}

/// Orthonormal basis of the column space (left singular vectors above the cutoff).
pub fn orthonormal_basis(c: &Matrix) -> Result<Matrix> {
    Ok(thin_svd(c)?.u)
}

/// `P_C(A) = C C† A`.
pub fn project_colspace(c: &Matrix, a: &Matrix) -> Result<Matrix> {
    if c.nrows() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "C has {} rows, A has {}",
            c.nrows(),
            a.nrows()
        )));
    }
    let q = orthonormal_basis(c)?;
    ensure_finite(a, "A")?;
    let coeffs = q.transpose() * a;
    Ok(q * coeffs)
}

/// Rank-restricted projection `P_{C,k}(A) = Q (Qᵀ A)_k`: the best approximation
/// of `A` of the form `C X` with `rank(X) <= k`.
pub fn project_colspace_rank_k(c: &Matrix, a: &Matrix, k: usize) -> Result<Matrix> {
    if c.nrows() != a.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "C has {} rows, A has {}",
            c.nrows(),
            a.nrows()
        )));
    }
    if k == 0 || k > c.ncols() {
        return Err(Error::RankOutOfRange {
            k,
            min: 1,
            max: c.ncols(),
        });
    }
    ensure_finite(a, "A")?;
    let q = orthonormal_basis(c)?;
    if q.ncols() == 0 {
        return Ok(Matrix::zeros(a.nrows(), a.ncols()));
    }
    let coeffs = q.transpose() * a;
    let reduced = thin_svd(&coeffs)?.truncated(k).reconstruct();
    Ok(q * reduced)
}

pub fn fro_norm(a: &Matrix) -> f64 {
    a.norm()
}

pub fn fro_norm_sq(a: &Matrix) -> f64 {
    a.norm_squared()
}

pub fn trace(a: &Matrix) -> f64 {
    a.diagonal().sum()
}

pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    let svd = thin_svd(a)?;
    Ok(svd.singular_values.get(0).copied().unwrap_or(0.0))
}

/// `‖A - Aᵀ‖_F / ‖A‖_F` (0 for the zero matrix).
pub fn relative_asymmetry(a: &Matrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    let scale = a.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / scale
}

pub fn ensure_symmetric(a: &Matrix, tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = relative_asymmetry(a);
    if asym > tol {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition; eigenvalues keep their sign.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    ensure_finite(a, "matrix")?;
    ensure_symmetric(a, 1e-10)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            vectors: Matrix::zeros(0, 0),
            values: Vector::zeros(0),
        });
    }
    let (evecs, evals) = faer_sym_eigen(&symmetrize(a))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| evals[j].abs().total_cmp(&evals[i].abs()));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &evecs.column(src));
        values[dst] = evals[src];
    }
    Ok(SymEigen { vectors, values })
}

/// Eigenvalues only, sorted descending by value.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(a, "matrix")?;
    ensure_symmetric(a, 1e-10)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals = faer_mat(&symmetrize(a))
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    vals.sort_by(|x, y| y.total_cmp(x));
    Ok(vals)
}

/// Largest entry of `|QᵀQ - I|`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let gram = q.transpose() * q;
    let r = gram.nrows();
    (gram - Matrix::identity(r, r)).amax()
}
