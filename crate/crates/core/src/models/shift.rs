//! Spectral shifting: initial-shift estimators and the SS closed forms.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fit::{check_sketch_size, sketched_kernel};
use super::{selected_columns, stream_left_product, symmetrized, ShiftedFactor};
use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Matrix, ThinSvd};
use crate::par;
use crate::sampling::{leverage_score_sample, ColumnSelection, RngSeed};

use super::fit::FASTER_RETRIES;

/// `(tr K - Σ_{j<=k} σ_j(K)) / (n - k)`, the mean of the bottom `n - k`
/// eigenvalues of an SPSD matrix.
pub fn delta_bar_exact(k_mat: &Matrix, k: usize) -> Result<f64> {
    let n = k_mat.nrows();
    if k >= n {
        return Err(Error::RankOutOfRange {
            k,
            min: 0,
            max: n.saturating_sub(1),
        });
    }
    let mut sigma: Vec<f64> = linalg::sym_eigenvalues(k_mat)?
        .into_iter()
        .map(f64::abs)
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let head: f64 = sigma[..k].iter().sum();
    Ok(((linalg::trace(k_mat) - head) / (n - k) as f64).max(0.0))
}

/// Randomized estimate of [`delta_bar_exact`]: `Q = orth(KΩ)` for an `n x l`
/// Gaussian `Ω`, then the top-`k` singular values of `QᵀK`. Two streaming
/// passes over `K`; clamped at zero.
pub fn delta_bar_approx<O: KernelMatrix + ?Sized>(
    oracle: &O,
    k: usize,
    l: usize,
    seed: RngSeed,
) -> Result<f64> {
    let n = oracle.size();
    if l < k {
        return Err(Error::InvalidInput(format!(
            "sketch width l = {l} is below k = {k}"
        )));
    }
    if l > n {
        return Err(Error::InvalidInput(format!(
            "sketch width l = {l} exceeds n = {n}"
        )));
    }
    if k >= n {
        return Err(Error::RankOutOfRange {
            k,
            min: 0,
            max: n.saturating_sub(1),
        });
    }
    let mut rng = seed.rng();
    let omega = Matrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));

    let mut y = Matrix::zeros(n, l);
    let mut trace = 0.0;
    oracle.stream_blocks(&mut |start, block| {
        let rows = omega.rows(start, block.ncols()).into_owned();
        y += par::matmul(block, &rows);
        for j in 0..block.ncols() {
            trace += block[(start + j, j)];
        }
        Ok(())
    })?;
    let q = linalg::orthonormal_basis(&y)?;
    let (z, _) = stream_left_product(oracle, &q.transpose())?;
    let sv = linalg::thin_svd(&z)?.singular_values;
    let head: f64 = sv.iter().take(k).sum();
    Ok(((trace - head) / (n - k) as f64).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsOptions {
    /// Replace `C̄` by an orthonormal basis before solving.
    pub orthonormalize: bool,
}

impl Default for SsOptions {
    fn default() -> Self {
        SsOptions {
            orthonormalize: true,
        }
    }
}

/// `C̄ = C - δ₀ P`: subtracts the initial shift at each selected column's own row.
fn shifted_sketch<O: KernelMatrix + ?Sized>(
    oracle: &O,
    cols: &[usize],
    initial_delta: f64,
) -> Result<Matrix> {
    if !(initial_delta >= 0.0 && initial_delta.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial delta must be finite and nonnegative, got {initial_delta}"
        )));
    }
    let mut c = oracle.gather(cols)?;
    for (j, &i) in cols.iter().enumerate() {
        c[(i, j)] -= initial_delta;
    }
    Ok(c)
}

/// Roundoff can push an analytically nonnegative shift a hair below zero.
fn clean_shift(delta: f64, scale: f64) -> f64 {
    if delta < 0.0 && -delta <= 1e-12 * scale.abs().max(f64::MIN_POSITIVE) {
        0.0
    } else {
        delta
    }
}

/// `(C̄ᵀC̄)† = V Σ⁻² Vᵀ` from the thin SVD of `C̄`.
fn gram_pinv(svd: &ThinSvd) -> Matrix {
    let mut vs = svd.v.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        vs.column_mut(j).scale_mut(1.0 / (s * s));
    }
    vs * svd.v.transpose()
}

/// Spectral-shifting fit: the global minimizer of `‖K - C̄ U C̄ᵀ - δ I‖_F`
/// over `(U, δ)`, with
/// `δ = (tr K - tr(C̄† K C̄)) / (n - rank C̄)` and
/// `U = C̄† K (C̄†)ᵀ - δ (C̄ᵀC̄)†`.
pub fn ss_fit<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    initial_delta: f64,
    opts: SsOptions,
) -> Result<ShiftedFactor> {
    let n = oracle.size();
    let cols = selected_columns(n, selection)?;
    let cbar = shifted_sketch(oracle, &cols, initial_delta)?;
    let svd = linalg::thin_svd(&cbar)?;
    let r = svd.rank();
    if r >= n {
        return Err(Error::FullRankSketch { rank: r });
    }

    if opts.orthonormalize {
        let q = svd.u;
        let (d, trace) = stream_left_product(oracle, &q.transpose())?;
        let u0 = symmetrized(par::matmul(&d, &q));
        let delta = clean_shift((trace - u0.trace()) / (n - r) as f64, trace / n as f64);
        let mut u = u0;
        for i in 0..r {
            u[(i, i)] -= delta;
        }
        return Ok(ShiftedFactor {
            c: q,
            u,
            delta,
            orthonormalized: true,
        });
    }

    let c_pinv = svd.pinv();
    let (d, trace) = stream_left_product(oracle, &c_pinv)?;
    let captured = (&d * &cbar).trace();
    let delta = clean_shift((trace - captured) / (n - r) as f64, trace / n as f64);
    let u = symmetrized(par::matmul(&d, &c_pinv.transpose()) - gram_pinv(&svd) * delta);
    Ok(ShiftedFactor {
        c: cbar,
        u,
        delta,
        orthonormalized: false,
    })
}

/// Sketched SS: the same closed form on the `s x s` problem
/// `min ‖Sᵀ(K - C̄ U C̄ᵀ - δ I)S‖_F` with `S` the distinct rows drawn by
/// leverage scores of `C̄` (unweighted, so `SᵀS = I`). Experimental; no error
/// guarantee is known.
pub fn faster_ss_fit<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    s: usize,
    initial_delta: f64,
    seed: RngSeed,
) -> Result<ShiftedFactor> {
    let cols = selected_columns(oracle.size(), selection)?;
    check_sketch_size(s, cols.len())?;
    let cbar = shifted_sketch(oracle, &cols, initial_delta)?;
    let rank = linalg::numerical_rank(&cbar)?;
    if rank == 0 {
        return Err(Error::InvalidInput("shifted sketch is zero".into()));
    }
    for attempt in 0..=FASTER_RETRIES {
        let draw = leverage_score_sample(&cbar, s, seed.derive(attempt as u64))?;
        let rows = draw.distinct();
        match sketched_ss(oracle, &cbar, &rows, rank) {
            Err(Error::RankDeficientSketch { .. }) | Err(Error::FullRankSketch { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::RankDeficientSketch {
        attempts: FASTER_RETRIES + 1,
    })
}

/// [`faster_ss_fit`] on caller-chosen sketch rows (duplicates ignored).
pub fn faster_ss_fit_with_sketch<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    rows: &[usize],
    initial_delta: f64,
) -> Result<ShiftedFactor> {
    let n = oracle.size();
    let cols = selected_columns(n, selection)?;
    let rows = ColumnSelection::unweighted(rows.to_vec());
    rows.validate(n)?;
    let cbar = shifted_sketch(oracle, &cols, initial_delta)?;
    let rank = linalg::numerical_rank(&cbar)?;
    sketched_ss(oracle, &cbar, &rows.distinct(), rank)
}

fn sketched_ss<O: KernelMatrix + ?Sized>(
    oracle: &O,
    cbar: &Matrix,
    rows: &[usize],
    required_rank: usize,
) -> Result<ShiftedFactor> {
    let a = cbar.select_rows(rows.iter());
    let svd = linalg::thin_svd(&a)?;
    let r = svd.rank();
    if r < required_rank {
        return Err(Error::RankDeficientSketch { attempts: 1 });
    }
    if r >= rows.len() {
        return Err(Error::FullRankSketch { rank: r });
    }
    let m = sketched_kernel(oracle, rows)?;
    let a_pinv = svd.pinv();
    let b = &a_pinv * &m;
    let trace_m = m.trace();
    let captured = (&b * &a).trace();
    let delta = clean_shift(
        (trace_m - captured) / (rows.len() - r) as f64,
        trace_m / rows.len() as f64,
    );
    let u = symmetrized(b * a_pinv.transpose() - gram_pinv(&svd) * delta);
    Ok(ShiftedFactor {
        c: cbar.clone(),
        u,
        delta,
        orthonormalized: false,
    })
}
