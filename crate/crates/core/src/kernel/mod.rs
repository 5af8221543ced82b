//! Datasets, kernel oracles and spectral calibration.

pub mod dataset;
pub mod oracle;
pub mod spectrum;
pub mod synthetic;

pub use dataset::{parse_libsvm, read_libsvm, Dataset, FeatureScaling};
pub use oracle::{
    AccessCounters, ColumnBlock, DenseOracle, KernelConfig, KernelFunction, KernelMatrix,
    KernelOracle, OracleOptions, Rbf, DEFAULT_BLOCK_SIZE, DEFAULT_FULL_CAP,
};
pub use spectrum::{
    calibrate_gamma, eta_from_eigenvalues, eta_ratio, rbf_eta, Calibration, CalibrationOptions,
};
