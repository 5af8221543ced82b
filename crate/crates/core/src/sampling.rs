//! Column-selection algorithms.
//!
//! Uniform sampling without replacement, adaptive sampling on residual column
//! norms, the uniform+adaptive² three-stage scheme (full and incomplete), and
//! row-leverage-score sampling used to sketch the intersection problem.
//!
//! Selections keep the raw drawn multiset. Model fitting builds `C` from
//! [`ColumnSelection::distinct`], so repeated draws never duplicate a column.

use std::collections::{BTreeMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Matrix};
use crate::par;

/// Relative residual level, `‖B‖_F / ‖K‖_F`, below which adaptive sampling
/// reports the residual as exhausted.
pub const EXHAUSTION_TOLERANCE: f64 = 1e-10;

/// A seed plus a stream id. Same pair, same draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngSeed { stream, ..self }
    }

    /// A child seed for a sub-task; mixes `tag` into the stream id.
    pub fn derive(self, tag: u64) -> Self {
        let mixed = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(tag)
            .rotate_left(17)
            ^ 0xD1B5_4A32_D192_ED03;
        RngSeed {
            seed: self.seed,
            stream: mixed,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSelection {
    /// Drawn indices in draw order; may repeat for with-replacement samplers.
    pub indices: Vec<usize>,
    /// `1 / sqrt(s p_i)` per drawn index when the selection is an importance sketch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Number of indices contributed by each sampling stage.
    #[serde(default)]
    pub stages: Vec<usize>,
}

impl ColumnSelection {
    pub fn unweighted(indices: Vec<usize>) -> Self {
        let len = indices.len();
        ColumnSelection {
            indices,
            weights: None,
            stages: vec![len],
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indices with repeats removed, first occurrence order.
    pub fn distinct(&self) -> Vec<usize> {
        let mut seen = HashSet::with_capacity(self.indices.len());
        self.indices
            .iter()
            .copied()
            .filter(|i| seen.insert(*i))
            .collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        if let Some(w) = &self.weights {
            if w.len() != self.indices.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} weights for {} indices",
                    w.len(),
                    self.indices.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::InvalidInput(
                    "weights must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A selection together with how it was produced, for experiment logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub algorithm: String,
    pub params: BTreeMap<String, f64>,
    pub seed: RngSeed,
    pub selection: ColumnSelection,
}

impl SelectionRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingProbabilities(Vec<f64>);

impl SamplingProbabilities {
    /// Normalizes nonnegative weights. Fails if they are all zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(
                "sampling weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ResidualExhausted);
        }
        Ok(SamplingProbabilities(
            weights.into_iter().map(|w| w / total).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `c` i.i.d. draws.
    pub fn draw(&self, c: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if c == 0 {
            return Vec::new();
        }
        let dist = WeightedIndex::new(&self.0).expect("normalized probabilities");
        (0..c).map(|_| dist.sample(rng)).collect()
    }
}

pub fn uniform_sample(n: usize, c: usize, seed: RngSeed) -> Result<ColumnSelection> {
    if c > n {
        return Err(Error::InvalidInput(format!(
            "cannot sample {c} of {n} columns without replacement"
        )));
    }
    let mut rng = seed.rng();
    Ok(ColumnSelection::unweighted(
        index::sample(&mut rng, n, c).into_vec(),
    ))
}

/// `p_j = ‖b_j‖² / ‖B‖_F²`.
pub fn adaptive_probabilities(b: &Matrix) -> Result<SamplingProbabilities> {
    linalg::ensure_finite(b, "residual")?;
    let norms: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    SamplingProbabilities::from_weights(norms)
}

/// `c` i.i.d. draws from the adaptive distribution of an explicit residual.
pub fn adaptive_sample(b: &Matrix, c: usize, seed: RngSeed) -> Result<ColumnSelection> {
    if c == 0 {
        return Ok(ColumnSelection::unweighted(Vec::new()));
    }
    let p = adaptive_probabilities(b)?;
    let mut rng = seed.rng();
    Ok(ColumnSelection::unweighted(p.draw(c, &mut rng)))
}

/// Squared norms of the residual columns `k_j - Q Qᵀ k_j` for `columns`,
/// together with `Σ ‖k_j‖²` over the same columns. Streams `block_size`
/// columns at a time.
pub(crate) fn residual_norms<O: KernelMatrix + ?Sized>(
    oracle: &O,
    basis: &Matrix,
    columns: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let mut norms = Vec::with_capacity(columns.len());
    let mut total = 0.0;
    for chunk in columns.chunks(oracle.block_size()) {
        let block = oracle.columns(chunk)?;
        let block_ref: &Matrix = &block;
        let pairs = par::map_indexed(chunk.len(), |j| {
            let k = block_ref.column(j);
            let ksq = k.norm_squared();
            if basis.ncols() == 0 {
                return (ksq, ksq);
            }
            let coef = basis.tr_mul(&k);
            let r = k - basis * coef;
            (r.norm_squared(), ksq)
        });
        for (r, k) in pairs {
            norms.push(r);
            total += k;
        }
    }
    Ok((norms, total))
}

/// Columns gathered so far; each distinct index is fetched from the oracle once.
struct Gathered {
    indices: Vec<usize>,
    seen: HashSet<usize>,
    columns: Matrix,
}

impl Gathered {
    fn new<O: KernelMatrix + ?Sized>(oracle: &O, indices: &[usize]) -> Result<Self> {
        let mut g = Gathered {
            indices: Vec::new(),
            seen: HashSet::new(),
            columns: Matrix::zeros(oracle.size(), 0),
        };
        g.extend(oracle, indices)?;
        Ok(g)
    }

    fn extend<O: KernelMatrix + ?Sized>(&mut self, oracle: &O, indices: &[usize]) -> Result<()> {
        let fresh: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|i| self.seen.insert(*i))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let block = oracle.gather(&fresh)?;
        let old = self.columns.ncols();
        let mut columns = std::mem::replace(&mut self.columns, Matrix::zeros(0, 0))
            .resize_horizontally(old + fresh.len(), 0.0);
        columns.columns_mut(old, fresh.len()).copy_from(&block);
        self.columns = columns;
        self.indices.extend(fresh);
        Ok(())
    }

    /// Adaptive probabilities over `pool` for the residual left by these columns.
    fn residual_probabilities<O: KernelMatrix + ?Sized>(
        &self,
        oracle: &O,
        pool: &[usize],
    ) -> Result<SamplingProbabilities> {
        let basis = linalg::orthonormal_basis(&self.columns)?;
        let (norms, total) = residual_norms(oracle, &basis, pool)?;
        let resid: f64 = norms.iter().sum();
        if total == 0.0 || resid.sqrt() <= EXHAUSTION_TOLERANCE * total.sqrt() {
            return Err(Error::ResidualExhausted);
        }
        SamplingProbabilities::from_weights(norms)
    }
}

/// Per-stage column counts for uniform+adaptive².
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub uniform: usize,
    pub adaptive1: usize,
    pub adaptive2: usize,
}

impl StageCounts {
    /// `c₁ = ⌈20 μ k ln(20k)⌉`, `c₂ = ⌈17.5 k / ε⌉`, `c₃ = ⌈10 k / ε⌉`, then
    /// clamped so `1 <= c₁ <= n` and `c₁ + c₂ + c₃ <= n`.
    pub fn from_params(k: usize, eps: f64, mu: f64, n: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("target rank must be at least 1".into()));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "eps must be in (0, 1], got {eps}"
            )));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mu must be positive, got {mu}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        let kf = k as f64;
        let c1 = (20.0 * mu * kf * (20.0 * kf).ln()).ceil() as usize;
        let c2 = (17.5 * kf / eps).ceil() as usize;
        let c3 = (10.0 * kf / eps).ceil() as usize;
        Ok(Self::clamped(c1, c2, c3, n))
    }

    /// Splits a total budget `c` into near-equal thirds (uniform stage gets
    /// the remainder first).
    pub fn split_total(c: usize) -> Self {
        let uniform = c.div_ceil(3);
        let adaptive1 = (c - uniform).div_ceil(2);
        StageCounts {
            uniform,
            adaptive1,
            adaptive2: c - uniform - adaptive1,
        }
    }

    pub fn clamped(c1: usize, c2: usize, c3: usize, n: usize) -> Self {
        let uniform = c1.clamp(1, n.max(1));
        let adaptive1 = c2.min(n.saturating_sub(uniform));
        let adaptive2 = c3.min(n.saturating_sub(uniform + adaptive1));
        StageCounts {
            uniform,
            adaptive1,
            adaptive2,
        }
    }

    pub fn total(&self) -> usize {
        self.uniform + self.adaptive1 + self.adaptive2
    }
}

/// Uniform+adaptive² with counts from `(k, ε, μ)`.
pub fn uniform_adaptive2<O: KernelMatrix + ?Sized>(
    oracle: &O,
    k: usize,
    eps: f64,
    mu: f64,
    seed: RngSeed,
) -> Result<ColumnSelection> {
    let counts = StageCounts::from_params(k, eps, mu, oracle.size())?;
    uniform_adaptive2_with_counts(oracle, counts, seed)
}

/// Uniform sampling for `C₁`, then adaptive sampling on `K - P_{C₁}(K)` for
/// `C₂` and on `K - P_{[C₁,C₂]}(K)` for `C₃`. Returns early, with the
/// indices drawn so far, if a residual is already exhausted.
pub fn uniform_adaptive2_with_counts<O: KernelMatrix + ?Sized>(
    oracle: &O,
    counts: StageCounts,
    seed: RngSeed,
) -> Result<ColumnSelection> {
    let n = oracle.size();
    if counts.uniform > n {
        return Err(Error::InvalidInput(format!(
            "uniform stage of {} exceeds n = {n}",
            counts.uniform
        )));
    }
    let mut rng = seed.rng();
    let all: Vec<usize> = (0..n).collect();

    let c1 = index::sample(&mut rng, n, counts.uniform).into_vec();
    let mut stages = vec![c1.len()];
    let mut indices = c1.clone();
    let mut gathered = Gathered::new(oracle, &c1)?;

    for (stage, count) in [counts.adaptive1, counts.adaptive2].into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        match gathered.residual_probabilities(oracle, &all) {
            Ok(p) => {
                let drawn = p.draw(count, &mut rng);
                if stage == 0 && counts.adaptive2 > 0 {
                    gathered.extend(oracle, &drawn)?;
                }
                stages.push(drawn.len());
                indices.extend(drawn);
            }
            Err(Error::ResidualExhausted) => return Ok(early(indices, stages)),
            Err(e) => return Err(e),
        }
    }
    Ok(ColumnSelection {
        indices,
        weights: None,
        stages,
    })
}

fn early(indices: Vec<usize>, stages: Vec<usize>) -> ColumnSelection {
    ColumnSelection {
        indices,
        weights: None,
        stages,
    }
}

/// `⌈10 c ln n⌉`, clamped to `[1, n]`. A heuristic size for the column pool
/// of the incomplete variant.
pub fn default_subsample(c_total: usize, n: usize) -> usize {
    let raw = (10.0 * c_total as f64 * (n.max(2) as f64).ln()).ceil() as usize;
    raw.clamp(1, n.max(1))
}

/// Incomplete uniform+adaptive²: each adaptive stage only looks at the
/// residual over a fresh uniform pool of `subsample` columns, so the full
/// matrix is never observed. Heuristic; no error guarantee.
pub fn incomplete_uniform_adaptive2<O: KernelMatrix + ?Sized>(
    oracle: &O,
    counts: StageCounts,
    subsample: usize,
    seed: RngSeed,
) -> Result<ColumnSelection> {
    let n = oracle.size();
    if subsample > n || subsample == 0 {
        return Err(Error::InvalidInput(format!(
            "subsample must be in 1..={n}, got {subsample}"
        )));
    }
    if counts.uniform > n {
        return Err(Error::InvalidInput(format!(
            "uniform stage of {} exceeds n = {n}",
            counts.uniform
        )));
    }
    let mut rng = seed.rng();
    let c1 = index::sample(&mut rng, n, counts.uniform).into_vec();
    let mut stages = vec![c1.len()];
    let mut indices = c1.clone();
    let mut gathered = Gathered::new(oracle, &c1)?;

    for (stage, count) in [counts.adaptive1, counts.adaptive2].into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        let pool = index::sample(&mut rng, n, subsample).into_vec();
        match gathered.residual_probabilities(oracle, &pool) {
            Ok(p) => {
                let drawn: Vec<usize> = p
                    .draw(count, &mut rng)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect();
                if stage == 0 && counts.adaptive2 > 0 {
                    gathered.extend(oracle, &drawn)?;
                }
                stages.push(drawn.len());
                indices.extend(drawn);
            }
            Err(Error::ResidualExhausted) => return Ok(early(indices, stages)),
            Err(e) => return Err(e),
        }
    }
    Ok(ColumnSelection {
        indices,
        weights: None,
        stages,
    })
}

/// Squared row norms of an orthonormal basis of `C`. They sum to `rank(C)`.
pub fn leverage_scores(c: &Matrix) -> Result<Vec<f64>> {
    let basis = linalg::orthonormal_basis(c)?;
    Ok(basis.row_iter().map(|r| r.norm_squared()).collect())
}

/// `s` i.i.d. rows drawn with `p_i ∝` row leverage of `C`; each draw carries
/// the weight `1 / sqrt(s p_i)`.
pub fn leverage_score_sample(c: &Matrix, s: usize, seed: RngSeed) -> Result<ColumnSelection> {
    if s == 0 {
        return Err(Error::InvalidInput("sketch size must be at least 1".into()));
    }
    let scores = leverage_scores(c)?;
    let p = SamplingProbabilities::from_weights(scores).map_err(|e| match e {
        Error::ResidualExhausted => Error::InvalidInput("leverage scores of a zero matrix".into()),
        other => other,
    })?;
    let mut rng = seed.rng();
    let indices = p.draw(s, &mut rng);
    let probs = p.as_slice();
    let weights = indices
        .iter()
        .map(|&i| 1.0 / (s as f64 * probs[i]).sqrt())
        .collect();
    Ok(ColumnSelection {
        indices,
        weights: Some(weights),
        stages: vec![s],
    })
}

/// `μ_k = (n/k) max_j ‖(V_k)_{j,:}‖²` over the top-`k` right singular vectors.
pub fn coherence(a: &Matrix, k: usize) -> Result<f64> {
    let svd = linalg::thin_svd(a)?;
    if k == 0 || k > svd.rank() {
        return Err(Error::RankOutOfRange {
            k,
            min: 1,
            max: svd.rank(),
        });
    }
    let n = a.ncols() as f64;
    let vk = svd.v.columns(0, k);
    let max_row = vk.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
    Ok(n / k as f64 * max_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{DenseOracle, OracleOptions};
    use crate::linalg::Vector;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_spsd(n: usize, rank: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Matrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    #[test]
    fn uniform_examples() {
        let sel = uniform_sample(10, 10, RngSeed::new(1)).unwrap();
        let mut sorted = sel.indices.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(
            uniform_sample(1, 1, RngSeed::new(2)).unwrap().indices,
            vec![0]
        );
        assert!(uniform_sample(3, 4, RngSeed::new(0)).is_err());
    }

    #[test]
    fn uniform_marginals_are_c_over_n() {
        let (n, c, draws) = (20usize, 5usize, 10_000usize);
        let mut counts = vec![0usize; n];
        for t in 0..draws {
            let sel = uniform_sample(n, c, RngSeed::new(99).with_stream(t as u64)).unwrap();
            assert_eq!(sel.distinct().len(), c);
            for i in sel.indices {
                counts[i] += 1;
            }
        }
        let p = c as f64 / n as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &k in &counts {
            assert!((k as f64 - mean).abs() <= 3.0 * sd + 1.0, "{counts:?}");
        }
    }

    #[test]
    fn adaptive_probability_examples() {
        let p = adaptive_probabilities(&Matrix::identity(3, 3)).unwrap();
        for &x in p.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut b = Matrix::zeros(3, 3);
        b[(0, 1)] = 2.0;
        b[(2, 1)] = -1.0;
        assert_eq!(
            adaptive_probabilities(&b).unwrap().as_slice(),
            &[0.0, 1.0, 0.0]
        );

        let b = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let p = adaptive_probabilities(&b).unwrap();
        assert!((p.as_slice()[0] - 0.2).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.8).abs() < 1e-15);

        assert!(matches!(
            adaptive_probabilities(&Matrix::zeros(3, 3)),
            Err(Error::ResidualExhausted)
        ));
    }

    #[test]
    fn adaptive_sample_examples() {
        let mut b = Matrix::zeros(4, 4);
        b[(1, 2)] = 1.0;
        let sel = adaptive_sample(&b, 7, RngSeed::new(3)).unwrap();
        assert_eq!(sel.indices, vec![2; 7]);
        assert!(adaptive_sample(&b, 0, RngSeed::new(3)).unwrap().is_empty());
        assert!(adaptive_sample(&Matrix::zeros(2, 2), 0, RngSeed::new(3))
            .unwrap()
            .is_empty());
        assert!(matches!(
            adaptive_sample(&Matrix::zeros(2, 2), 1, RngSeed::new(3)),
            Err(Error::ResidualExhausted)
        ));
    }

    #[test]
    fn adaptive_sample_uniform_weights_is_uniform() {
        let n = 8;
        let draws = 16_000;
        let sel = adaptive_sample(&Matrix::identity(n, n), draws, RngSeed::new(5)).unwrap();
        let mut counts = vec![0usize; n];
        for i in sel.indices {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &k in &counts {
            assert!(
                (k as f64 - draws as f64 * p).abs() <= 3.0 * sd,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn stage_counts_formula() {
        let c = StageCounts::from_params(2, 1.0, 1.0, 10_000).unwrap();
        assert_eq!(c.uniform, (40.0 * 40f64.ln()).ceil() as usize);
        assert_eq!(c.uniform, 148);
        assert_eq!(c.adaptive1, 35);
        assert_eq!(c.adaptive2, 20);

        let small = StageCounts::from_params(2, 1.0, 1.0, 160).unwrap();
        assert_eq!(
            small,
            StageCounts {
                uniform: 148,
                adaptive1: 12,
                adaptive2: 0
            }
        );
        assert_eq!(small.total(), 160);

        assert!(StageCounts::from_params(0, 1.0, 1.0, 10).is_err());
        assert!(StageCounts::from_params(1, 0.0, 1.0, 10).is_err());
        assert!(StageCounts::from_params(1, 1.5, 1.0, 10).is_err());

        assert_eq!(
            StageCounts::split_total(8),
            StageCounts {
                uniform: 3,
                adaptive1: 3,
                adaptive2: 2
            }
        );
        assert_eq!(StageCounts::split_total(1).total(), 1);
    }

    #[test]
    fn exhausted_after_uniform_stage_returns_early() {
        // Rank-2 matrix: any two generic columns span it.
        let k = random_spsd(30, 2, 8);
        let oracle = DenseOracle::new(k).unwrap();
        let counts = StageCounts {
            uniform: 5,
            adaptive1: 4,
            adaptive2: 3,
        };
        let sel = uniform_adaptive2_with_counts(&oracle, counts, RngSeed::new(1)).unwrap();
        assert_eq!(sel.stages, vec![5]);
        assert_eq!(sel.len(), 5);
    }

    #[test]
    fn full_run_has_all_stages() {
        let k = random_spsd(40, 40, 9);
        let oracle = DenseOracle::with_options(
            k,
            OracleOptions {
                block_size: 7,
                full_cap: 10,
            },
        )
        .unwrap();
        let counts = StageCounts {
            uniform: 4,
            adaptive1: 3,
            adaptive2: 2,
        };
        let sel = uniform_adaptive2_with_counts(&oracle, counts, RngSeed::new(4)).unwrap();
        assert_eq!(sel.stages, vec![4, 3, 2]);
        assert_eq!(sel.len(), 9);
        assert!(oracle.counters().peak_resident() <= 7);
        let again = uniform_adaptive2_with_counts(&oracle, counts, RngSeed::new(4)).unwrap();
        assert_eq!(sel, again);
    }

    #[test]
    fn incomplete_with_full_pool_matches_full_probabilities() {
        let k = random_spsd(25, 25, 10);
        let oracle = DenseOracle::new(k).unwrap();
        let selected = vec![3, 17, 8];
        let all: Vec<usize> = (0..25).collect();
        let g = Gathered::new(&oracle, &selected).unwrap();
        let full = g.residual_probabilities(&oracle, &all).unwrap();
        // A permuted pool covering all columns yields the same distribution over indices.
        let mut pool = all.clone();
        pool.reverse();
        let perm = g.residual_probabilities(&oracle, &pool).unwrap();
        for (pos, &j) in pool.iter().enumerate() {
            assert!((perm.as_slice()[pos] - full.as_slice()[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn incomplete_observes_few_entries() {
        let n = 300;
        let k = random_spsd(n, 60, 11);
        let oracle = DenseOracle::with_options(
            k,
            OracleOptions {
                block_size: 50,
                full_cap: 10,
            },
        )
        .unwrap();
        let counts = StageCounts {
            uniform: 6,
            adaptive1: 5,
            adaptive2: 4,
        };
        let sub = 40;
        let sel = incomplete_uniform_adaptive2(&oracle, counts, sub, RngSeed::new(2)).unwrap();
        assert_eq!(sel.len(), 15);
        let bound = (n * (counts.total() + 2 * sub)) as u64;
        assert!(oracle.counters().entries() <= bound);
        assert!(incomplete_uniform_adaptive2(&oracle, counts, n + 1, RngSeed::new(2)).is_err());
    }

    #[test]
    fn default_subsample_is_clamped() {
        assert_eq!(default_subsample(10, 50), 50);
        assert_eq!(
            default_subsample(2, 10_000),
            (20.0 * 10_000f64.ln()).ceil() as usize
        );
    }

    #[test]
    fn leverage_examples() {
        let mut c = Matrix::zeros(6, 2);
        c[(1, 0)] = 1.0;
        c[(4, 1)] = 1.0;
        let lev = leverage_scores(&c).unwrap();
        let expected = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        for (a, b) in lev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let sel = leverage_score_sample(&c, 50, RngSeed::new(1)).unwrap();
        assert!(sel.indices.iter().all(|&i| i == 1 || i == 4));
        let w = sel.weights.as_ref().unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / (25f64).sqrt()).abs() < 1e-14));
        sel.validate(6).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rank3 = Matrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0))
            * Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let sum: f64 = leverage_scores(&rank3).unwrap().iter().sum();
        assert!((sum - 3.0).abs() < 1e-10);

        assert!(leverage_score_sample(&Matrix::zeros(4, 2), 3, RngSeed::new(0)).is_err());
    }

    #[test]
    fn leverage_sketch_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 40;
        let u =
            linalg::orthonormal_basis(&Matrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)))
                .unwrap();
        let draws = 2000;
        let s = 10;
        let mut mean = Matrix::zeros(3, 3);
        for t in 0..draws {
            let sel = leverage_score_sample(&u, s, RngSeed::new(1).with_stream(t)).unwrap();
            let w = sel.weights.unwrap();
            let mut stu = Matrix::zeros(s, 3);
            for (r, (&i, &wi)) in sel.indices.iter().zip(&w).enumerate() {
                stu.set_row(r, &(u.row(i) * wi));
            }
            mean += stu.transpose() * stu;
        }
        mean /= draws as f64;
        let dev = (mean - Matrix::identity(3, 3)).amax();
        assert!(dev <= 5.0 / (draws as f64).sqrt(), "deviation {dev}");
    }

    #[test]
    fn coherence_examples() {
        let n = 6;
        assert!((coherence(&Matrix::identity(n, n), n).unwrap() - 1.0).abs() < 1e-12);

        let mut spike = Matrix::identity(n, n) * 1e-3;
        spike[(2, 2)] = 10.0;
        let mu = coherence(&spike, 1).unwrap();
        assert!((mu - n as f64).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        for k in 1..=12 {
            let mu = coherence(&a, k).unwrap();
            assert!(mu >= 1.0 - 1e-10 && mu <= 12.0 / k as f64 + 1e-10);
        }
        assert!(coherence(&a, 0).is_err());
        assert!(coherence(&a, 13).is_err());
    }

    #[test]
    fn record_round_trip() {
        let rec = SelectionRecord {
            algorithm: "uniform".into(),
            params: BTreeMap::from([("c".to_string(), 3.0)]),
            seed: RngSeed::new(7).with_stream(2),
            selection: ColumnSelection::unweighted(vec![4, 1, 2]),
        };
        let back = SelectionRecord::from_json(&rec.to_json().unwrap()).unwrap();
        assert_eq!(rec, back);
    }

    proptest! {
        #[test]
        fn adaptive_probabilities_sum_to_one_and_ignore_signs(
            vals in proptest::collection::vec(-5.0f64..5.0, 16),
            flips in proptest::collection::vec(any::<bool>(), 4),
        ) {
            let b = Matrix::from_vec(4, 4, vals);
            prop_assume!(b.norm() > 1e-6);
            let p = adaptive_probabilities(&b).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let mut flipped = b.clone();
            for (j, f) in flips.iter().enumerate() {
                if *f {
                    flipped.column_mut(j).neg_mut();
                }
            }
            let q = adaptive_probabilities(&flipped).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn selections_are_deterministic(seed in any::<u64>(), stream in 0u64..100) {
            let s = RngSeed { seed, stream };
            prop_assert_eq!(uniform_sample(50, 7, s).unwrap(), uniform_sample(50, 7, s).unwrap());
            let c = Matrix::from_fn(12, 2, |i, j| ((i * 3 + j) % 5) as f64 + 1.0);
            prop_assert_eq!(
                leverage_score_sample(&c, 6, s).unwrap(),
                leverage_score_sample(&c, 6, s).unwrap()
            );
            let _ = Vector::zeros(1);
        }
    }
}
