//! Turns a [`DataConfig`] into something that can hand out kernel oracles.

use std::sync::Arc;

use colsketch::kernel::{
    calibrate_gamma, eta_ratio, read_libsvm, synthetic, CalibrationOptions, Dataset, DenseOracle,
    KernelMatrix, KernelOracle, OracleOptions, Rbf,
};
use colsketch::linalg::Matrix;
use colsketch::models::testmat;

use crate::config::{DataConfig, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// Fraction of leading eigenvalues in the η ratio.
pub const ETA_FRACTION: f64 = 0.05;

pub type BoxedOracle = Box<dyn KernelMatrix + Send>;

#[derive(Clone)]
enum Backing {
    Points { data: Arc<Dataset>, kernel: Rbf },
    Dense(Arc<Matrix>),
}

/// A built kernel matrix. Cheap to clone; every call to [`Problem::oracle`]
/// returns a fresh oracle with its own access counters.
#[derive(Clone)]
pub struct Problem {
    pub label: String,
    pub n: usize,
    pub gamma: Option<f64>,
    /// η of the matrix when it could be computed under the dense cap.
    pub eta: Option<f64>,
    options: OracleOptions,
    backing: Backing,
}

pub fn oracle_options(cfg: &ExperimentConfig) -> OracleOptions {
    let defaults = OracleOptions::default();
    OracleOptions {
        block_size: cfg.block_size.unwrap_or(defaults.block_size),
        full_cap: cfg.full_cap.unwrap_or(defaults.full_cap),
    }
}

pub fn load_dataset(data: &DataConfig) -> Result<Option<Dataset>> {
    Ok(match data {
        DataConfig::Libsvm { path, rescale } => Some(read_libsvm(path, *rescale)?),
        DataConfig::Clustered {
            n,
            dim,
            clusters,
            spread,
            seed,
        } => Some(synthetic::clustered_points(
            *n, *dim, *clusters, *spread, *seed,
        )),
        DataConfig::Regression {
            n,
            dim,
            noise_sd,
            seed,
        } => Some(synthetic::regression(*n, *dim, *noise_sd, *seed)),
        DataConfig::Geometric { .. } | DataConfig::LowRank { .. } => None,
    })
}

/// Resolves the RBF bandwidth: the configured γ, or a calibrated one.
pub fn resolve_gamma(cfg: &ExperimentConfig, data: &Arc<Dataset>) -> Result<(f64, Option<f64>)> {
    match (cfg.kernel.gamma, cfg.kernel.target_eta) {
        (Some(g), _) => Ok((g, None)),
        (None, Some(target)) => {
            let cap = oracle_options(cfg).full_cap;
            if data.len() > cap {
                return Err(HarnessError::Config(format!(
                    "calibrating gamma needs the dense matrix, n = {} exceeds full_cap = {cap}; set kernel.gamma",
                    data.len()
                )));
            }
            let cal = calibrate_gamma(data, target, &CalibrationOptions::default())?;
            Ok((cal.gamma, Some(cal.eta)))
        }
        (None, None) => Err(HarnessError::Config(
            "no kernel bandwidth configured".into(),
        )),
    }
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Problem> {
        let options = oracle_options(cfg);
        let label = if cfg.name == "experiment" {
            cfg.data.label()
        } else {
            cfg.name.clone()
        };
        match load_dataset(&cfg.data)? {
            Some(data) => {
                let data = Arc::new(data);
                let (gamma, eta) = resolve_gamma(cfg, &data)?;
                Problem::from_points(label, data, gamma, eta, options)
            }
            None => {
                let k = match cfg.data {
                    DataConfig::Geometric { n, base, seed } => {
                        testmat::spectrum_matrix(&testmat::geometric_spectrum(n, base), seed)
                    }
                    DataConfig::LowRank { n, rank, seed } => {
                        testmat::random_low_rank_spsd(n, rank, seed)
                    }
                    _ => unreachable!("dataset sources handled above"),
                };
                Problem::from_matrix(label, k, options)
            }
        }
    }

    pub fn from_points(
        label: String,
        data: Arc<Dataset>,
        gamma: f64,
        eta: Option<f64>,
        options: OracleOptions,
    ) -> Result<Problem> {
        let kernel = Rbf::new(gamma)?;
        let n = data.len();
        if n == 0 {
            return Err(HarnessError::Config("dataset is empty".into()));
        }
        let mut problem = Problem {
            label,
            n,
            gamma: Some(gamma),
            eta,
            options,
            backing: Backing::Points { data, kernel },
        };
        if problem.eta.is_none() && n <= options.full_cap {
            problem.eta = Some(eta_ratio(&problem.dense()?, ETA_FRACTION)?);
        }
        Ok(problem)
    }

    pub fn from_matrix(label: String, k: Matrix, options: OracleOptions) -> Result<Problem> {
        let n = k.nrows();
        let eta = if n > 0 {
            Some(eta_ratio(&k, ETA_FRACTION)?)
        } else {
            None
        };
        // Validates shape and finiteness once.
        DenseOracle::with_options(k.clone(), options)?;
        Ok(Problem {
            label,
            n,
            gamma: None,
            eta,
            options,
            backing: Backing::Dense(Arc::new(k)),
        })
    }

    pub fn options(&self) -> OracleOptions {
        self.options
    }

    pub fn oracle(&self) -> Result<BoxedOracle> {
        Ok(match &self.backing {
            Backing::Points { data, kernel } => {
                Box::new(KernelOracle::new(data.clone(), *kernel).with_options(self.options))
            }
            Backing::Dense(k) => Box::new(DenseOracle::shared(k.clone(), self.options)?),
        })
    }

    /// The RBF oracle with its concrete type, for GPR.
    pub fn points(&self) -> Option<(&Arc<Dataset>, Rbf)> {
        match &self.backing {
            Backing::Points { data, kernel } => Some((data, *kernel)),
            Backing::Dense(_) => None,
        }
    }

    /// The explicit matrix, subject to the oracle's dense cap.
    pub fn dense(&self) -> Result<Matrix> {
        match &self.backing {
            Backing::Dense(k) => Ok((**k).clone()),
            Backing::Points { .. } => Ok(self.oracle()?.full()?),
        }
    }
}
