//! SPSD matrices with known spectra, for tests and benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Haar-ish random orthogonal matrix (orthonormal basis of a Gaussian matrix).
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    linalg::orthonormal_basis(&gaussian(n, n, seed)).expect("finite gaussian matrix")
}

/// `V diag(values) Vᵀ` with a seeded random orthogonal `V`.
pub fn spectrum_matrix(values: &[f64], seed: u64) -> Matrix {
    let n = values.len();
    let v = random_orthogonal(n, seed);
    let mut scaled = v.clone();
    for (j, &lam) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(lam);
    }
    linalg::symmetrize(&(scaled * v.transpose()))
}

/// `base^{-t}` for `t = 1..=n`.
pub fn geometric_spectrum(n: usize, base: f64) -> Vec<f64> {
    (1..=n).map(|t| base.powi(-(t as i32))).collect()
}

/// `k` leading eigenvalues `top_values`, the remaining `n - k` all equal to `theta`.
pub fn make_flat_tail_matrix(
    n: usize,
    k: usize,
    top_values: &[f64],
    theta: f64,
    seed: u64,
) -> Result<Matrix> {
    if top_values.len() != k || k > n {
        return Err(Error::InvalidInput(format!(
            "need {k} <= {n} top values, got {}",
            top_values.len()
        )));
    }
    if theta < 0.0 {
        return Err(Error::InvalidInput("tail value must be nonnegative".into()));
    }
    if top_values.iter().any(|&v| v.is_nan() || v <= theta) {
        return Err(Error::InvalidInput(
            "top values must exceed the tail value".into(),
        ));
    }
    let mut values = top_values.to_vec();
    values.resize(n, theta);
    Ok(spectrum_matrix(&values, seed))
}

/// Block-diagonal matrix of `k` equal blocks, ones on the diagonal and `alpha`
/// off it inside each block.
pub fn make_block_unit_matrix(n: usize, k: usize, alpha: f64) -> Result<Matrix> {
    if k == 0 || !n.is_multiple_of(k) {
        return Err(Error::InvalidInput(format!(
            "n = {n} is not divisible by k = {k}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let p = n / k;
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i / p != j / p {
            0.0
        } else if i == j {
            1.0
        } else {
            alpha
        }
    }))
}

/// `G Gᵀ` with `G` an `n x rank` Gaussian matrix.
pub fn random_low_rank_spsd(n: usize, rank: usize, seed: u64) -> Matrix {
    let g = gaussian(n, rank, seed);
    linalg::symmetrize(&(&g * g.transpose()))
}

/// Almost surely positive definite `G Gᵀ / n` with square Gaussian `G`.
pub fn random_spsd(n: usize, seed: u64) -> Matrix {
    random_low_rank_spsd(n, n, seed) / n.max(1) as f64
}

/// Diagonal matrix, handy for hand-checked cases.
pub fn diagonal(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_matrix_tail_energy() {
        for (n, k, alpha) in [(8, 2, 0.5), (30, 3, 0.9), (12, 4, 0.0)] {
            let a = make_block_unit_matrix(n, k, alpha).unwrap();
            let ak = linalg::best_rank_k(&a, k).unwrap();
            let expected = (1.0 - alpha) * ((n - k) as f64).sqrt();
            assert!(((&a - ak).norm() - expected).abs() < 1e-10);
        }
        assert!(make_block_unit_matrix(9, 2, 0.5).is_err());
    }

    #[test]
    fn two_block_identity_keeps_one_unit_per_block() {
        // With α = 0 every eigenvalue is 1; any best rank-2 approximation is a
        // rank-2 orthogonal projector, so it has trace 2 and tail energy n - 2.
        let a = make_block_unit_matrix(6, 2, 0.0).unwrap();
        let a2 = linalg::best_rank_k(&a, 2).unwrap();
        assert!((a2.trace() - 2.0).abs() < 1e-10);
        assert!((&a2 * &a2 - &a2).amax() < 1e-10);
    }

    #[test]
    fn flat_tail_spectrum() {
        let m = make_flat_tail_matrix(20, 3, &[5.0, 4.0, 3.0], 0.0, 1).unwrap();
        assert_eq!(linalg::numerical_rank(&m).unwrap(), 3);
        let m = make_flat_tail_matrix(20, 2, &[5.0, 4.0], 1.5, 2).unwrap();
        let ev = linalg::sym_eigenvalues(&m).unwrap();
        assert!((ev[0] - 5.0).abs() < 1e-10 && (ev[1] - 4.0).abs() < 1e-10);
        assert!(ev[2..].iter().all(|v| (v - 1.5).abs() < 1e-10));
        assert!(make_flat_tail_matrix(20, 2, &[5.0, 1.0], 1.5, 2).is_err());
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = random_orthogonal(15, 3);
        assert!(linalg::orthonormality_error(&q) < 1e-12);
    }
}
