//! Lazy access to an implicit `n x n` SPSD matrix.
//!
//! Every read goes through [`KernelMatrix`], which counts observed entries and
//! tracks how many kernel columns are resident at once. Column blocks are
//! handed out as [`ColumnBlock`] guards; a block is released when the guard is
//! dropped. A single request may not exceed the oracle's `block_size`.

use std::ops::{Deref, Range};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::par;

pub const DEFAULT_BLOCK_SIZE: usize = 1000;
pub const DEFAULT_FULL_CAP: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Maximum number of kernel columns one request may materialize.
    pub block_size: usize,
    /// Largest `n` for which [`KernelMatrix::full`] is allowed.
    pub full_cap: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            block_size: DEFAULT_BLOCK_SIZE,
            full_cap: DEFAULT_FULL_CAP,
        }
    }
}

#[derive(Debug, Default)]
pub struct AccessCounters {
    entries: AtomicU64,
    resident: AtomicUsize,
    peak_resident: AtomicUsize,
}

impl AccessCounters {
    pub fn entries(&self) -> u64 {
        self.entries.load(Ordering::Relaxed)
    }

    pub fn peak_resident(&self) -> usize {
        self.peak_resident.load(Ordering::Relaxed)
    }

    pub fn resident(&self) -> usize {
        self.resident.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.entries.store(0, Ordering::Relaxed);
        self.peak_resident
            .store(self.resident.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    fn observe(&self, count: usize) {
        self.entries.fetch_add(count as u64, Ordering::Relaxed);
    }

    fn acquire(&self, cols: usize) {
        let now = self.resident.fetch_add(cols, Ordering::Relaxed) + cols;
        self.peak_resident.fetch_max(now, Ordering::Relaxed);
    }

    fn release(&self, cols: usize) {
        self.resident.fetch_sub(cols, Ordering::Relaxed);
    }
}

/// Resident kernel columns; released on drop.
pub struct ColumnBlock<'a> {
    data: Matrix,
    counters: &'a AccessCounters,
}

impl Deref for ColumnBlock<'_> {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.data
    }
}

impl Drop for ColumnBlock<'_> {
    fn drop(&mut self) {
        self.counters.release(self.data.ncols());
    }
}

impl ColumnBlock<'_> {
    /// Copies the block out. The copy is not tracked as resident kernel data.
    pub fn to_matrix(&self) -> Matrix {
        self.data.clone()
    }
}

pub trait KernelMatrix: Sync {
    fn size(&self) -> usize;

    /// Uncounted single entry; implementations provide this, callers use the
    /// counted methods below.
    fn raw_entry(&self, i: usize, j: usize) -> f64;

    /// Writes column `j` into `out` (length `n`), uncounted.
    fn raw_column(&self, j: usize, out: &mut [f64]) {
        for (i, x) in out.iter_mut().enumerate() {
            *x = self.raw_entry(i, j);
        }
    }

    fn options(&self) -> &OracleOptions;

    fn counters(&self) -> &AccessCounters;

    fn block_size(&self) -> usize {
        self.options().block_size.max(1)
    }

    fn column(&self, j: usize) -> Result<Vector> {
        let block = self.columns(&[j])?;
        Ok(block.column(0).into_owned())
    }

    /// The columns `indices` as an `n x b` block, `b <= block_size`.
    fn columns(&self, indices: &[usize]) -> Result<ColumnBlock<'_>> {
        let n = self.size();
        if indices.len() > self.block_size() {
            return Err(Error::BlockTooLarge {
                requested: indices.len(),
                limit: self.block_size(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let counters = self.counters();
        counters.acquire(indices.len());
        let mut data = Matrix::zeros(n, indices.len());
        par::for_each_chunk_mut(data.as_mut_slice(), n, |c, col| {
            self.raw_column(indices[c], col)
        });
        counters.observe(n * indices.len());
        Ok(ColumnBlock { data, counters })
    }

    fn column_range(&self, range: Range<usize>) -> Result<ColumnBlock<'_>> {
        let idx: Vec<usize> = range.collect();
        self.columns(&idx)
    }

    /// `K[:, indices]` as an owned `n x c` matrix, fetched in blocks.
    fn gather(&self, indices: &[usize]) -> Result<Matrix> {
        let n = self.size();
        let mut out = Matrix::zeros(n, indices.len());
        let mut offset = 0;
        for chunk in indices.chunks(self.block_size()) {
            let block = self.columns(chunk)?;
            out.columns_mut(offset, chunk.len()).copy_from(&*block);
            offset += chunk.len();
        }
        Ok(out)
    }

    /// `K[rows, cols]`; counts `|rows| * |cols|` entries.
    fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<Matrix> {
        let n = self.size();
        if let Some(&bad) = rows.iter().chain(cols).find(|&&j| j >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let mut out = Matrix::zeros(rows.len(), cols.len());
        let r = rows.len();
        par::for_each_chunk_mut(out.as_mut_slice(), r.max(1), |c, col| {
            if r > 0 {
                for (i, x) in col.iter_mut().enumerate() {
                    *x = self.raw_entry(rows[i], cols[c]);
                }
            }
        });
        self.counters().observe(rows.len() * cols.len());
        Ok(out)
    }

    fn diagonal(&self) -> Vector {
        let n = self.size();
        let d = Vector::from_fn(n, |i, _| self.raw_entry(i, i));
        self.counters().observe(n);
        d
    }

    fn trace(&self) -> f64 {
        self.diagonal().sum()
    }

    /// One pass over all columns in order, `block_size` at a time.
    /// The callback gets the first column index of the block and the block.
    fn stream_blocks(&self, f: &mut dyn FnMut(usize, &Matrix) -> Result<()>) -> Result<()> {
        let n = self.size();
        let b = self.block_size();
        let mut start = 0;
        while start < n {
            let end = (start + b).min(n);
            let block = self.column_range(start..end)?;
            f(start, &block)?;
            start = end;
        }
        Ok(())
    }

    /// The whole matrix. Refused above the oracle's `full_cap`.
    fn full(&self) -> Result<Matrix> {
        let n = self.size();
        let cap = self.options().full_cap;
        if n > cap {
            return Err(Error::MemoryGuard { n, cap });
        }
        let mut out = Matrix::zeros(n, n);
        par::for_each_chunk_mut(out.as_mut_slice(), n.max(1), |j, col| {
            if n > 0 {
                self.raw_column(j, col)
            }
        });
        self.counters().observe(n * n);
        Ok(out)
    }
}

/// An explicit matrix behind the oracle interface.
#[derive(Debug)]
pub struct DenseOracle {
    matrix: Arc<Matrix>,
    options: OracleOptions,
    counters: AccessCounters,
}

impl DenseOracle {
    pub fn new(matrix: Matrix) -> Result<Self> {
        Self::with_options(matrix, OracleOptions::default())
    }

    pub fn with_options(matrix: Matrix, options: OracleOptions) -> Result<Self> {
        Self::shared(Arc::new(matrix), options)
    }

    /// Wraps a matrix that other oracles may also read. Each oracle keeps
    /// its own access counters.
    pub fn shared(matrix: Arc<Matrix>, options: OracleOptions) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "kernel matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        crate::linalg::ensure_finite(&matrix, "kernel matrix")?;
        Ok(DenseOracle {
            matrix,
            options,
            counters: AccessCounters::default(),
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

impl KernelMatrix for DenseOracle {
    fn size(&self) -> usize {
        self.matrix.nrows()
    }

    fn raw_entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    fn raw_column(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.matrix.column(j).as_slice());
    }

    fn options(&self) -> &OracleOptions {
        &self.options
    }

    fn counters(&self) -> &AccessCounters {
        &self.counters
    }
}

pub trait KernelFunction: Sync + Send {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
}

impl<F> KernelFunction for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self(x, y)
    }
}

/// `κ(x, y) = exp(-‖x - y‖² / (2γ²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rbf {
    pub gamma: f64,
}

impl Rbf {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "RBF gamma must be positive, got {gamma}"
            )));
        }
        Ok(Rbf { gamma })
    }
}

impl KernelFunction for Rbf {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * self.gamma * self.gamma)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma: f64,
    /// Observation noise σ² used by GPR.
    #[serde(default)]
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Kernel matrix defined by a dataset and a kernel function, generated on demand.
pub struct KernelOracle<K = Rbf> {
    data: Arc<Dataset>,
    kernel: K,
    options: OracleOptions,
    counters: AccessCounters,
}

impl KernelOracle<Rbf> {
    pub fn rbf(data: Arc<Dataset>, gamma: f64) -> Result<Self> {
        Ok(KernelOracle::new(data, Rbf::new(gamma)?))
    }
}

impl<K: KernelFunction> KernelOracle<K> {
    pub fn new(data: Arc<Dataset>, kernel: K) -> Self {
        KernelOracle {
            data,
            kernel,
            options: OracleOptions::default(),
            counters: AccessCounters::default(),
        }
    }

    pub fn with_options(mut self, options: OracleOptions) -> Self {
        self.options = options;
        self
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// `[κ(x_1, x), ..., κ(x_n, x)]` for an arbitrary point `x`.
    pub fn cross_column(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.data.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query point has dimension {}, data has {}",
                x.len(),
                self.data.dim()
            )));
        }
        Ok(Vector::from_fn(self.data.len(), |i, _| {
            self.kernel.eval(self.data.point(i), x)
        }))
    }
}

impl<K: KernelFunction> KernelMatrix for KernelOracle<K> {
    fn size(&self) -> usize {
        self.data.len()
    }

    fn raw_entry(&self, i: usize, j: usize) -> f64 {
        self.kernel.eval(self.data.point(i), self.data.point(j))
    }

    fn raw_column(&self, j: usize, out: &mut [f64]) {
        let xj = self.data.point(j);
        for (i, x) in out.iter_mut().enumerate() {
            *x = self.kernel.eval(self.data.point(i), xj);
        }
    }

    fn options(&self) -> &OracleOptions {
        &self.options
    }

    fn counters(&self) -> &AccessCounters {
        &self.counters
    }
}
