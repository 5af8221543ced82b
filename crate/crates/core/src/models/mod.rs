//! Intersection-matrix models built on a column sketch.
//!
//! Every model here returns a factored approximation: [`LowRankFactor`] for
//! `C U Cᵀ` (prototype, Nyström, faster) and [`ShiftedFactor`] for
//! `C̄ U C̄ᵀ + δ I` (spectral shifting and its sketched variant).

mod fit;
mod shift;
pub mod testmat;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Matrix};
use crate::sampling::{ColumnSelection, RngSeed};

pub use fit::{
    faster_fit, faster_fit_weighted, faster_fit_with_sketch, nystrom_fit, prototype_fit,
    SketchWeighting, FASTER_RETRIES,
};
pub use shift::{
    delta_bar_approx, delta_bar_exact, faster_ss_fit, faster_ss_fit_with_sketch, ss_fit, SsOptions,
};

/// `K̃ = C U Cᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactor {
    pub c: Matrix,
    pub u: Matrix,
}

/// `K̃ = C̄ U C̄ᵀ + δ I`. When `orthonormalized` is set, `c` holds an
/// orthonormal basis of the shifted sketch rather than the sketch itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedFactor {
    pub c: Matrix,
    pub u: Matrix,
    pub delta: f64,
    pub orthonormalized: bool,
}

/// Shared view of the two factor kinds.
pub trait Approximation {
    fn sketch(&self) -> &Matrix;
    fn intersection(&self) -> &Matrix;

    fn shift(&self) -> f64 {
        0.0
    }

    /// Whether this is a `C̄ U C̄ᵀ + δ I` factor.
    fn is_shifted(&self) -> bool {
        false
    }

    fn size(&self) -> usize {
        self.sketch().nrows()
    }

    /// Dense `n x n` approximation.
    fn reconstruct(&self) -> Matrix {
        let c = self.sketch();
        let mut k = c * self.intersection() * c.transpose();
        let delta = self.shift();
        if delta != 0.0 {
            for i in 0..k.nrows() {
                k[(i, i)] += delta;
            }
        }
        k
    }

    /// Columns `start..start + len` of the approximation.
    fn column_block(&self, start: usize, len: usize) -> Matrix {
        let c = self.sketch();
        let rows = c.rows(start, len);
        let mut block = c * (self.intersection() * rows.transpose());
        let delta = self.shift();
        if delta != 0.0 {
            for j in 0..len {
                block[(start + j, j)] += delta;
            }
        }
        block
    }

    /// Nonzero entries in the sketch plus the intersection matrix.
    fn nnz(&self) -> usize {
        let count = |m: &Matrix| m.iter().filter(|x| **x != 0.0).count();
        count(self.sketch()) + count(self.intersection())
    }
}

impl Approximation for LowRankFactor {
    fn sketch(&self) -> &Matrix {
        &self.c
    }
    fn intersection(&self) -> &Matrix {
        &self.u
    }
}

impl Approximation for ShiftedFactor {
    fn sketch(&self) -> &Matrix {
        &self.c
    }
    fn intersection(&self) -> &Matrix {
        &self.u
    }
    fn shift(&self) -> f64 {
        self.delta
    }
    fn is_shifted(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    LowRank(LowRankFactor),
    Shifted(ShiftedFactor),
}

impl From<LowRankFactor> for Factor {
    fn from(f: LowRankFactor) -> Self {
        Factor::LowRank(f)
    }
}

impl From<ShiftedFactor> for Factor {
    fn from(f: ShiftedFactor) -> Self {
        Factor::Shifted(f)
    }
}

impl Approximation for Factor {
    fn sketch(&self) -> &Matrix {
        match self {
            Factor::LowRank(f) => &f.c,
            Factor::Shifted(f) => &f.c,
        }
    }
    fn intersection(&self) -> &Matrix {
        match self {
            Factor::LowRank(f) => &f.u,
            Factor::Shifted(f) => &f.u,
        }
    }
    fn shift(&self) -> f64 {
        match self {
            Factor::LowRank(_) => 0.0,
            Factor::Shifted(f) => f.delta,
        }
    }
    fn is_shifted(&self) -> bool {
        matches!(self, Factor::Shifted(_))
    }
}

pub const FACTOR_FORMAT: &str = "colsketch-factor/1";

/// JSON container for a factor. Matrices are stored column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorFile {
    pub format: String,
    pub kind: String,
    pub n: usize,
    pub c: usize,
    pub sketch: Vec<f64>,
    pub intersection: Vec<f64>,
    pub delta: f64,
    pub orthonormalized: bool,
}

impl Factor {
    pub fn to_file(&self) -> FactorFile {
        let (kind, orthonormalized) = match self {
            Factor::LowRank(_) => ("low_rank", false),
            Factor::Shifted(f) => ("shifted", f.orthonormalized),
        };
        FactorFile {
            format: FACTOR_FORMAT.to_string(),
            kind: kind.to_string(),
            n: self.sketch().nrows(),
            c: self.sketch().ncols(),
            sketch: self.sketch().as_slice().to_vec(),
            intersection: self.intersection().as_slice().to_vec(),
            delta: self.shift(),
            orthonormalized,
        }
    }

    pub fn from_file(file: FactorFile) -> Result<Self> {
        if file.format != FACTOR_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unknown factor format {:?}",
                file.format
            )));
        }
        if file.sketch.len() != file.n * file.c || file.intersection.len() != file.c * file.c {
            return Err(Error::ShapeMismatch(format!(
                "factor payload does not match n = {}, c = {}",
                file.n, file.c
            )));
        }
        let c = Matrix::from_vec(file.n, file.c, file.sketch);
        let u = Matrix::from_vec(file.c, file.c, file.intersection);
        match file.kind.as_str() {
            "low_rank" => Ok(Factor::LowRank(LowRankFactor { c, u })),
            "shifted" => Ok(Factor::Shifted(ShiftedFactor {
                c,
                u,
                delta: file.delta,
                orthonormalized: file.orthonormalized,
            })),
            other => Err(Error::InvalidInput(format!(
                "unknown factor kind {other:?}"
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Factor::from_file(serde_json::from_str(s)?)
    }
}

/// `‖K - K̃‖_F / ‖K‖_F` against an explicit matrix. Returns 0 for `K = 0 = K̃`.
pub fn approx_error(k: &Matrix, factor: &impl Approximation) -> Result<f64> {
    if k.nrows() != factor.size() || !k.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "matrix is {}x{}, factor is for n = {}",
            k.nrows(),
            k.ncols(),
            factor.size()
        )));
    }
    let diff = (k - factor.reconstruct()).norm();
    Ok(relative(diff, k.norm()))
}

/// Same quantity computed one column block at a time.
pub fn approx_error_streaming<O: KernelMatrix + ?Sized>(
    oracle: &O,
    factor: &impl Approximation,
) -> Result<f64> {
    if oracle.size() != factor.size() {
        return Err(Error::ShapeMismatch(format!(
            "oracle has n = {}, factor has n = {}",
            oracle.size(),
            factor.size()
        )));
    }
    let mut diff_sq = 0.0;
    let mut norm_sq = 0.0;
    oracle.stream_blocks(&mut |start, block| {
        let approx = factor.column_block(start, block.ncols());
        diff_sq += (block - approx).norm_squared();
        norm_sq += block.norm_squared();
        Ok(())
    })?;
    Ok(relative(diff_sq.sqrt(), norm_sq.sqrt()))
}

fn relative(diff: f64, norm: f64) -> f64 {
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

/// Squared Frobenius objective `‖K - K̃‖_F²`.
pub fn objective(k: &Matrix, factor: &impl Approximation) -> f64 {
    (k - factor.reconstruct()).norm_squared()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Prototype,
    Nystrom,
    Faster,
    Ss,
    FasterSs,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Prototype,
        ModelKind::Nystrom,
        ModelKind::Faster,
        ModelKind::Ss,
        ModelKind::FasterSs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Prototype => "prototype",
            ModelKind::Nystrom => "nystrom",
            ModelKind::Faster => "faster",
            ModelKind::Ss => "ss",
            ModelKind::FasterSs => "faster_ss",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model {s:?}")))
    }
}

/// Knobs for [`fit`]; each model reads the ones it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitParams {
    /// Sketch size `s` for the sketched models. Defaults to `4c` capped at `n`.
    pub sketch_size: Option<usize>,
    /// Initial shift for the SS models.
    pub initial_delta: f64,
    pub ss: SsOptions,
    pub weighting: SketchWeighting,
    pub seed: RngSeed,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            sketch_size: None,
            initial_delta: 0.0,
            ss: SsOptions::default(),
            weighting: SketchWeighting::default(),
            seed: RngSeed::new(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub c: usize,
    pub entries_observed: u64,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approx_error: Option<f64>,
}

/// Fits `kind` on `selection`, timing the fit and counting the kernel
/// entries it observes.
pub fn fit<O: KernelMatrix + ?Sized>(
    kind: ModelKind,
    oracle: &O,
    selection: &ColumnSelection,
    params: &FitParams,
) -> Result<(Factor, FitReport)> {
    let before = oracle.counters().entries();
    let start = Instant::now();
    let c = selection.distinct().len();
    let s = params
        .sketch_size
        .unwrap_or(4 * c)
        .min(oracle.size())
        .max(c);
    let factor: Factor = match kind {
        ModelKind::Prototype => prototype_fit(oracle, selection)?.into(),
        ModelKind::Nystrom => nystrom_fit(oracle, selection)?.into(),
        ModelKind::Faster => {
            faster_fit_weighted(oracle, selection, s, params.seed, params.weighting)?.into()
        }
        ModelKind::Ss => ss_fit(oracle, selection, params.initial_delta, params.ss)?.into(),
        ModelKind::FasterSs => {
            faster_ss_fit(oracle, selection, s, params.initial_delta, params.seed)?.into()
        }
    };
    let report = FitReport {
        model: kind.name().to_string(),
        c,
        entries_observed: oracle.counters().entries() - before,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        approx_error: None,
    };
    Ok((factor, report))
}

/// Distinct selected indices, checked against `n` and required nonempty.
pub(crate) fn selected_columns(n: usize, selection: &ColumnSelection) -> Result<Vec<usize>> {
    if selection.is_empty() {
        return Err(Error::InvalidInput("empty column selection".into()));
    }
    selection.validate(n)?;
    Ok(selection.distinct())
}

/// `left * K`, one column block at a time. The diagonal of `K` is collected
/// on the same pass.
pub(crate) fn stream_left_product<O: KernelMatrix + ?Sized>(
    oracle: &O,
    left: &Matrix,
) -> Result<(Matrix, f64)> {
    let n = oracle.size();
    let mut out = Matrix::zeros(left.nrows(), n);
    let mut trace = 0.0;
    oracle.stream_blocks(&mut |start, block| {
        let part = crate::par::matmul(left, block);
        out.columns_mut(start, block.ncols()).copy_from(&part);
        for j in 0..block.ncols() {
            trace += block[(start + j, j)];
        }
        Ok(())
    })?;
    Ok((out, trace))
}

pub(crate) fn symmetrized(m: Matrix) -> Matrix {
    linalg::symmetrize(&m)
}
