//! Spectral-decay ratio η and RBF bandwidth calibration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::oracle::{KernelMatrix, KernelOracle, OracleOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// `‖K_p‖_F² / ‖K‖_F²` with `p = ceil(fraction * n)`.
pub fn eta_ratio(k: &Matrix, fraction: f64) -> Result<f64> {
    linalg::ensure_symmetric(k, 1e-10)?;
    let values = linalg::sym_eigenvalues(k)?;
    eta_from_eigenvalues(&values, fraction)
}

pub fn eta_from_eigenvalues(values: &[f64], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let p = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sq.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidInput(
            "zero matrix has no spectral ratio".into(),
        ));
    }
    Ok(sq[..p].iter().sum::<f64>() / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fraction: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            gamma_min: 1e-3,
            gamma_max: 1e3,
            max_iterations: 60,
            tolerance: 0.01,
            fraction: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub eta: f64,
    pub iterations: usize,
}

pub fn rbf_eta(data: &Arc<Dataset>, gamma: f64, fraction: f64) -> Result<f64> {
    let oracle = KernelOracle::rbf(data.clone(), gamma)?.with_options(OracleOptions {
        full_cap: usize::MAX,
        ..OracleOptions::default()
    });
    eta_ratio(&oracle.full()?, fraction)
}

/// Bisection in `log γ` for the RBF bandwidth whose kernel matrix has the
/// requested η. Relies on η growing with γ.
pub fn calibrate_gamma(
    data: &Arc<Dataset>,
    target_eta: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    if !(target_eta > 0.0 && target_eta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target eta must be in (0, 1), got {target_eta}"
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let mut lo = opts.gamma_min.ln();
    let mut hi = opts.gamma_max.ln();
    let eta_lo = rbf_eta(data, lo.exp(), opts.fraction)?;
    let eta_hi = rbf_eta(data, hi.exp(), opts.fraction)?;
    if !(eta_lo <= target_eta && target_eta <= eta_hi) {
        return Err(Error::CalibrationFailed(format!(
            "target {target_eta} outside [{eta_lo:.4}, {eta_hi:.4}] over gamma in [{}, {}]",
            opts.gamma_min, opts.gamma_max
        )));
    }

    let mut best = if (eta_lo - target_eta).abs() < (eta_hi - target_eta).abs() {
        Calibration {
            gamma: lo.exp(),
            eta: eta_lo,
            iterations: 0,
        }
    } else {
        Calibration {
            gamma: hi.exp(),
            eta: eta_hi,
            iterations: 0,
        }
    };
    for it in 1..=opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let eta = rbf_eta(data, mid.exp(), opts.fraction)?;
        if (eta - target_eta).abs() < (best.eta - target_eta).abs() {
            best = Calibration {
                gamma: mid.exp(),
                eta,
                iterations: it,
            };
        }
        // A quarter of the tolerance leaves slack for re-evaluation roundoff.
        if (eta - target_eta).abs() <= 0.25 * opts.tolerance {
            break;
        }
        if eta < target_eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.eta - target_eta).abs() > opts.tolerance {
        return Err(Error::CalibrationFailed(format!(
            "closest eta {:.4} at gamma {:.4} misses target {target_eta}",
            best.eta, best.gamma
        )));
    }
    Ok(best)
}
