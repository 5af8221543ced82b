//! Prototype, Nyström and leverage-sketched intersection matrices.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{selected_columns, stream_left_product, symmetrized, LowRankFactor};
use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Matrix};
use crate::par;
use crate::sampling::{leverage_score_sample, ColumnSelection, RngSeed};

/// Fresh sketch draws tried after the first one fails the rank check.
pub const FASTER_RETRIES: usize = 3;

/// `U = C† K (C†)ᵀ`, computed as `D = C† K` one column block at a time and
/// then `U = D (C†)ᵀ`. Observes all `n²` entries plus `C`.
pub fn prototype_fit<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
) -> Result<LowRankFactor> {
    let cols = selected_columns(oracle.size(), selection)?;
    let c = oracle.gather(&cols)?;
    let svd = linalg::thin_svd(&c)?;
    if svd.rank() == 0 {
        return Err(Error::InvalidInput("selected columns are all zero".into()));
    }
    let c_pinv = svd.pinv();
    let (d, _) = stream_left_product(oracle, &c_pinv)?;
    let u = symmetrized(par::matmul(&d, &c_pinv.transpose()));
    Ok(LowRankFactor { c, u })
}

/// `U = W†` with `W` the selected principal submatrix, read off the rows of `C`.
pub fn nystrom_fit<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
) -> Result<LowRankFactor> {
    let cols = selected_columns(oracle.size(), selection)?;
    let c = oracle.gather(&cols)?;
    let w = c.select_rows(cols.iter());
    let u = symmetrized(linalg::pinv(&linalg::symmetrize(&w))?);
    Ok(LowRankFactor { c, u })
}

/// How the rows drawn for the faster model enter the sketched problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchWeighting {
    /// Distinct drawn rows, unit weights.
    #[default]
    Unscaled,
    /// Every draw kept, scaled by `1/sqrt(s p_i)`.
    Scaled,
}

/// `Ũ = (SᵀC)† (SᵀKS) (CᵀS)†` with the rows of `S` drawn from the row
/// leverage scores of `C`, unscaled. A draw whose `SᵀC` loses rank is
/// replaced, up to [`FASTER_RETRIES`] times.
pub fn faster_fit<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    s: usize,
    seed: RngSeed,
) -> Result<LowRankFactor> {
    faster_fit_weighted(oracle, selection, s, seed, SketchWeighting::Unscaled)
}

pub fn faster_fit_weighted<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    s: usize,
    seed: RngSeed,
    weighting: SketchWeighting,
) -> Result<LowRankFactor> {
    let cols = selected_columns(oracle.size(), selection)?;
    check_sketch_size(s, cols.len())?;
    let c = oracle.gather(&cols)?;
    let rank = linalg::numerical_rank(&c)?;
    for attempt in 0..=FASTER_RETRIES {
        let draw = leverage_score_sample(&c, s, seed.derive(attempt as u64))?;
        let sketch = match weighting {
            SketchWeighting::Scaled => draw,
            SketchWeighting::Unscaled => ColumnSelection::unweighted(draw.distinct()),
        };
        match sketched_intersection(oracle, &c, &sketch, rank) {
            Ok(u) => return Ok(LowRankFactor { c, u }),
            Err(Error::RankDeficientSketch { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RankDeficientSketch {
        attempts: FASTER_RETRIES + 1,
    })
}

/// [`faster_fit`] with a caller-supplied sketch (weights optional) and no retries.
pub fn faster_fit_with_sketch<O: KernelMatrix + ?Sized>(
    oracle: &O,
    selection: &ColumnSelection,
    sketch: &ColumnSelection,
) -> Result<LowRankFactor> {
    let n = oracle.size();
    let cols = selected_columns(n, selection)?;
    if sketch.is_empty() {
        return Err(Error::InvalidInput("empty sketch".into()));
    }
    sketch.validate(n)?;
    let c = oracle.gather(&cols)?;
    let rank = linalg::numerical_rank(&c)?;
    let u = sketched_intersection(oracle, &c, sketch, rank)?;
    Ok(LowRankFactor { c, u })
}

pub(super) fn check_sketch_size(s: usize, c: usize) -> Result<()> {
    if s < c {
        return Err(Error::InvalidInput(format!(
            "sketch size {s} is below c = {c}"
        )));
    }
    if s == 0 {
        return Err(Error::InvalidInput("sketch size must be positive".into()));
    }
    Ok(())
}

/// `K[idx, idx]` for a possibly repeating index list, fetching each distinct
/// pair once.
pub(super) fn sketched_kernel<O: KernelMatrix + ?Sized>(
    oracle: &O,
    idx: &[usize],
) -> Result<Matrix> {
    let mut pos = HashMap::new();
    let mut uniq = Vec::new();
    for &i in idx {
        pos.entry(i).or_insert_with(|| {
            uniq.push(i);
            uniq.len() - 1
        });
    }
    let small = oracle.submatrix(&uniq, &uniq)?;
    let map: Vec<usize> = idx.iter().map(|i| pos[i]).collect();
    Ok(Matrix::from_fn(idx.len(), idx.len(), |r, t| {
        small[(map[r], map[t])]
    }))
}

fn sketched_intersection<O: KernelMatrix + ?Sized>(
    oracle: &O,
    c: &Matrix,
    sketch: &ColumnSelection,
    required_rank: usize,
) -> Result<Matrix> {
    let idx = &sketch.indices;
    let ones;
    let w: &[f64] = match &sketch.weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; idx.len()];
            &ones
        }
    };
    let mut a = c.select_rows(idx.iter());
    for (r, &wr) in w.iter().enumerate() {
        a.row_mut(r).scale_mut(wr);
    }
    let svd = linalg::thin_svd(&a)?;
    if svd.rank() < required_rank {
        return Err(Error::RankDeficientSketch { attempts: 1 });
    }
    let mut m = sketched_kernel(oracle, idx)?;
    for r in 0..idx.len() {
        for t in 0..idx.len() {
            m[(r, t)] *= w[r] * w[t];
        }
    }
    let a_pinv = svd.pinv();
    Ok(symmetrized(&a_pinv * m * a_pinv.transpose()))
}
