//! Using a factored approximation: eigendecomposition, regularized solves,
//! Gaussian process regression and the evaluation metrics.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{Dataset, KernelFunction, KernelMatrix, KernelOracle, OracleOptions, Rbf};
use crate::linalg::{self, Matrix, Vector};
use crate::models::Approximation;
use crate::par;

/// `K̃ = B diag(values) Bᵀ + complement_value (I - B Bᵀ)` with orthonormal `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxEigen {
    pub basis: Matrix,
    /// Descending.
    pub values: Vec<f64>,
    pub complement_value: f64,
}

impl ApproxEigen {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.basis.nrows();
        let mut scaled = self.basis.clone();
        for (j, &v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v - self.complement_value);
        }
        let mut k = scaled * self.basis.transpose();
        for i in 0..n {
            k[(i, i)] += self.complement_value;
        }
        k
    }

    /// Leading `k` eigenvectors. Fails if the factor carries fewer.
    pub fn top_vectors(&self, k: usize) -> Result<Matrix> {
        if k > self.basis.ncols() {
            return Err(Error::RankOutOfRange {
                k,
                min: 0,
                max: self.basis.ncols(),
            });
        }
        Ok(self.basis.columns(0, k).into_owned())
    }
}

/// Clipped negative mass above this fraction of `‖U‖₂`, or above this
/// fraction of `tr(K̃)` once mapped through `C`, sends a low-rank factor down
/// the basis route instead of `L = C U^{1/2}`.
const CLIP_TOLERANCE: f64 = 1e-6;

/// Eigenpairs of a factored approximation without forming the `n x n` matrix.
pub fn approx_eig(factor: &impl Approximation) -> Result<ApproxEigen> {
    if !factor.is_shifted() {
        if let Some(eig) = eig_via_square_root(factor)? {
            return Ok(eig);
        }
    }
    eig_via_basis(factor)
}

fn eig_via_square_root(factor: &impl Approximation) -> Result<Option<ApproxEigen>> {
    let u = linalg::symmetrize(factor.intersection());
    let eig = linalg::sym_eigen(&u)?;
    let norm = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let clipped = eig.values.iter().fold(0.0f64, |m, v| m.max(-v));
    if clipped > CLIP_TOLERANCE * norm {
        return Ok(None);
    }
    // With an ill-conditioned U the dropped eigenvalues can be tiny next to
    // ‖U‖₂ and still matter after multiplying by C.
    let mapped = factor.sketch() * &eig.vectors;
    let (mut kept, mut dropped) = (0.0, 0.0);
    for (j, &v) in eig.values.iter().enumerate() {
        let w = v * mapped.column(j).norm_squared();
        if v > 0.0 {
            kept += w;
        } else {
            dropped -= w;
        }
    }
    if dropped > CLIP_TOLERANCE * kept {
        return Ok(None);
    }
    let mut l = mapped;
    for (j, &v) in eig.values.iter().enumerate() {
        l.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    let svd = linalg::thin_svd(&l)?;
    Ok(Some(ApproxEigen {
        values: svd.singular_values.iter().map(|s| s * s).collect(),
        basis: svd.u,
        complement_value: 0.0,
    }))
}

fn eig_via_basis(factor: &impl Approximation) -> Result<ApproxEigen> {
    let c = factor.sketch();
    let delta = factor.shift();
    let q = linalg::orthonormal_basis(c)?;
    let r = q.transpose() * c;
    let core = linalg::symmetrize(&(&r * factor.intersection() * r.transpose()));
    let eig = linalg::sym_eigen(&core)?;
    let mut order: Vec<usize> = (0..eig.values.len()).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));
    let rotated = &q * &eig.vectors;
    let mut basis = Matrix::zeros(c.nrows(), order.len());
    let mut values = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &rotated.column(src));
        values.push(eig.values[src] + delta);
    }
    Ok(ApproxEigen {
        basis,
        values,
        complement_value: delta,
    })
}

/// `L J Lᵀ + diag(d)` with `J = diag(±1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankPlusDiagonal {
    pub l: Matrix,
    pub signs: Vec<f64>,
    pub diag: Vector,
}

impl LowRankPlusDiagonal {
    pub fn from_eigen(eig: &ApproxEigen) -> Self {
        let n = eig.basis.nrows();
        let delta = eig.complement_value;
        let kept: Vec<usize> = (0..eig.values.len())
            .filter(|&j| eig.values[j] != delta)
            .collect();
        let mut l = Matrix::zeros(n, kept.len());
        let mut signs = Vec::with_capacity(kept.len());
        for (dst, &j) in kept.iter().enumerate() {
            let gap = eig.values[j] - delta;
            l.set_column(dst, &(eig.basis.column(j) * gap.abs().sqrt()));
            signs.push(gap.signum());
        }
        LowRankPlusDiagonal {
            l,
            signs,
            diag: Vector::from_element(n, delta),
        }
    }

    pub fn from_factor(factor: &impl Approximation) -> Result<Self> {
        Ok(Self::from_eigen(&approx_eig(factor)?))
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut lj = self.l.clone();
        for (j, &s) in self.signs.iter().enumerate() {
            lj.column_mut(j).scale_mut(s);
        }
        lj * self.l.transpose() + Matrix::from_diagonal(&self.diag)
    }

    /// Solves `(L J Lᵀ + diag(d) + α I) b = y` through the Woodbury identity
    /// `(Δ + L J Lᵀ)⁻¹ = Δ⁻¹ - Δ⁻¹L (J + LᵀΔ⁻¹L)⁻¹ LᵀΔ⁻¹`.
    pub fn solve(&self, alpha: f64, y: &Vector) -> Result<Vector> {
        let n = self.diag.len();
        if y.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side has length {}, system is {n}",
                y.len()
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        let d = self.diag.add_scalar(alpha);
        if d.iter().any(|&x| x.is_nan() || x <= 0.0) {
            return Err(Error::SingularSystem(
                "shifted diagonal is not positive".into(),
            ));
        }
        let dinv_y = y.component_div(&d);
        if self.l.ncols() == 0 {
            return Ok(dinv_y);
        }
        let mut dinv_l = self.l.clone();
        for mut col in dinv_l.column_iter_mut() {
            col.component_div_assign(&d);
        }
        let mut inner = self.l.transpose() * &dinv_l;
        for (j, &s) in self.signs.iter().enumerate() {
            inner[(j, j)] += s;
        }
        let rhs = self.l.transpose() * &dinv_y;
        let z = if self.signs.iter().all(|&s| s > 0.0) {
            inner.clone().cholesky().map(|ch| ch.solve(&rhs))
        } else {
            None
        };
        let z = match z {
            Some(z) => z,
            None => inner
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("capacitance matrix is singular".into()))?,
        };
        let b = dinv_y - dinv_l * z;
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularSystem("solution is not finite".into()));
        }
        Ok(b)
    }
}

/// `(K̃ + α I)⁻¹ y` for a factored `K̃`, in `O(n l²)`.
pub fn smw_solve(factor: &impl Approximation, alpha: f64, y: &Vector) -> Result<Vector> {
    LowRankPlusDiagonal::from_factor(factor)?.solve(alpha, y)
}

/// Gaussian process regression with a fixed kernel and noise variance.
pub struct GprModel<K: KernelFunction = Rbf> {
    oracle: KernelOracle<K>,
    sigma2: f64,
    weights: Vector,
}

impl<K: KernelFunction> GprModel<K> {
    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn training_data(&self) -> &Arc<Dataset> {
        self.oracle.dataset()
    }

    /// `k(x⋆)ᵀ b`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.oracle.cross_column(x)?.dot(&self.weights))
    }

    pub fn predict_all(&self, test: &Dataset) -> Result<Vec<f64>> {
        if test.dim() != self.oracle.dataset().dim() {
            return Err(Error::ShapeMismatch(format!(
                "test data has dimension {}, training data has {}",
                test.dim(),
                self.oracle.dataset().dim()
            )));
        }
        par::map_indexed(test.len(), |i| self.predict(test.point(i)))
            .into_iter()
            .collect()
    }
}

fn training_labels(data: &Dataset) -> Result<Vector> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::InvalidInput("regression needs labeled training data".into()))?;
    Ok(Vector::from_column_slice(labels))
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    Ok(())
}

/// GPR weights `b = (K̃ + σ² I)⁻¹ y` from a factored approximation of the
/// training kernel matrix.
pub fn gpr_fit<K: KernelFunction>(
    train: Arc<Dataset>,
    kernel: K,
    factor: &impl Approximation,
    sigma2: f64,
) -> Result<GprModel<K>> {
    check_sigma2(sigma2)?;
    let y = training_labels(&train)?;
    if factor.size() != train.len() {
        return Err(Error::ShapeMismatch(format!(
            "factor is for n = {}, training set has {} points",
            factor.size(),
            train.len()
        )));
    }
    let weights = smw_solve(factor, sigma2, &y)?;
    Ok(GprModel {
        oracle: KernelOracle::new(train, kernel),
        sigma2,
        weights,
    })
}

/// Exact GPR through a Cholesky solve on the full training kernel matrix.
pub fn dense_gpr_fit<K: KernelFunction>(
    train: Arc<Dataset>,
    kernel: K,
    sigma2: f64,
) -> Result<GprModel<K>> {
    check_sigma2(sigma2)?;
    let y = training_labels(&train)?;
    let oracle = KernelOracle::new(train, kernel).with_options(OracleOptions {
        full_cap: usize::MAX,
        ..OracleOptions::default()
    });
    let weights = dense_regularized_solve(&oracle.full()?, sigma2, &y)?;
    Ok(GprModel {
        oracle,
        sigma2,
        weights,
    })
}

pub fn gpr_predict<K: KernelFunction>(model: &GprModel<K>, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// `(K + α I)⁻¹ y` by Cholesky, LU as a fallback.
pub fn dense_regularized_solve(k: &Matrix, alpha: f64, y: &Vector) -> Result<Vector> {
    if k.nrows() != y.len() || !k.is_square() {
        return Err(Error::ShapeMismatch(
            "system and right-hand side disagree".into(),
        ));
    }
    let mut a = linalg::symmetrize(k);
    for i in 0..a.nrows() {
        a[(i, i)] += alpha;
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(y));
    }
    a.lu()
        .solve(y)
        .ok_or_else(|| Error::SingularSystem("regularized kernel matrix is singular".into()))
}

/// `(1/k) ‖U - V Vᵀ U‖_F²` for orthonormal `n x k` bases. 0 for equal spans,
/// 1 for orthogonal ones.
pub fn misalignment(u_true: &Matrix, v_approx: &Matrix) -> Result<f64> {
    if u_true.shape() != v_approx.shape() {
        return Err(Error::ShapeMismatch(format!(
            "bases are {:?} and {:?}",
            u_true.shape(),
            v_approx.shape()
        )));
    }
    let k = u_true.ncols();
    if k == 0 {
        return Err(Error::InvalidInput("empty bases".into()));
    }
    for m in [u_true, v_approx] {
        let err = linalg::orthonormality_error(m);
        if err > 1e-6 {
            return Err(Error::NotOrthonormal(err));
        }
    }
    let residual = u_true - v_approx * (v_approx.transpose() * u_true);
    Ok((residual.norm_squared() / k as f64).clamp(0.0, 1.0))
}

/// Leading `k` eigenvectors of an explicit symmetric matrix, by eigenvalue.
pub fn top_eigenvectors(k_mat: &Matrix, k: usize) -> Result<Matrix> {
    let eig = linalg::sym_eigen(k_mat)?;
    if k > eig.values.len() {
        return Err(Error::RankOutOfRange {
            k,
            min: 0,
            max: eig.values.len(),
        });
    }
    let mut order: Vec<usize> = (0..eig.values.len()).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]));
    let mut out = Matrix::zeros(k_mat.nrows(), k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        out.set_column(dst, &eig.vectors.column(src));
    }
    Ok(out)
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    let sum: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y_true.len() as f64)
}
