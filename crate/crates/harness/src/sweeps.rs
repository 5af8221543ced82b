//! The four sweeps. Each one enumerates its cells, runs independent work
//! units on the current rayon pool and folds the per-repeat samples back in
//! cell order, so the resulting table does not depend on scheduling.

use std::sync::Arc;
use std::time::Instant;

use colsketch::downstream::{
    approx_eig, dense_gpr_fit, gpr_fit, misalignment, mse, top_eigenvectors,
};
use colsketch::kernel::{Dataset, KernelMatrix, KernelOracle, Rbf};
use colsketch::linalg::Matrix;
use colsketch::models::{
    approx_error_streaming, delta_bar_approx, delta_bar_exact, fit, Approximation, Factor,
    FitParams, ModelKind, SsOptions,
};
use colsketch::sampling::{
    default_subsample, incomplete_uniform_adaptive2, uniform_adaptive2_with_counts, uniform_sample,
    ColumnSelection, RngSeed, StageCounts,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, InitialDelta, SamplerKind};
use crate::error::{HarnessError, Result};
use crate::source::Problem;
use crate::table::{CellFailure, ResultRow, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Agg {
    Min,
    Mean,
    Median,
}

impl Agg {
    fn suffix(self) -> &'static str {
        match self {
            Agg::Min => "min",
            Agg::Mean => "mean",
            Agg::Median => "median",
        }
    }

    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Agg::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Agg::Mean => mean(xs),
            Agg::Median => median(xs),
        }
    }
}

fn aggregations(metric: &str) -> &'static [Agg] {
    match metric {
        "approx_error" => &[Agg::Min, Agg::Mean, Agg::Median],
        "misalignment" => &[Agg::Mean, Agg::Median],
        _ => &[Agg::Mean],
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One repeat of one cell.
struct Sample {
    metrics: Vec<(&'static str, f64)>,
    fit_seconds: f64,
    sampling_seconds: f64,
}

type Outcome = std::result::Result<Sample, String>;

struct Cell {
    model: String,
    sampler: String,
    c: usize,
    seeds: String,
    samples: Vec<Sample>,
    failure: Option<String>,
}

impl Cell {
    fn new(model: &str, sampler: &str, c: usize, seeds: String) -> Self {
        Cell {
            model: model.to_string(),
            sampler: sampler.to_string(),
            c,
            seeds,
            samples: Vec::new(),
            failure: None,
        }
    }

    fn push(&mut self, outcome: Outcome) {
        match outcome {
            Ok(s) => self.samples.push(s),
            Err(e) => {
                self.failure.get_or_insert(e);
            }
        }
    }

    fn name(&self) -> String {
        format!("{}/{}/c={}", self.model, self.sampler, self.c)
    }
}

fn finish(problem: &Problem, cells: Vec<Cell>) -> Table {
    let mut table = Table::default();
    for cell in cells {
        if let Some(error) = &cell.failure {
            table.failures.push(CellFailure {
                cell: cell.name(),
                error: error.clone(),
            });
            continue;
        }
        let fit_seconds: Vec<f64> = cell.samples.iter().map(|s| s.fit_seconds).collect();
        let sampling_seconds: Vec<f64> = cell.samples.iter().map(|s| s.sampling_seconds).collect();
        let names: Vec<&str> = cell
            .samples
            .first()
            .map(|s| s.metrics.iter().map(|m| m.0).collect())
            .unwrap_or_default();
        for name in names {
            let values: Vec<f64> = cell
                .samples
                .iter()
                .filter_map(|s| s.metrics.iter().find(|m| m.0 == name).map(|m| m.1))
                .collect();
            for &agg in aggregations(name) {
                let value = agg.apply(&values);
                if !value.is_finite() {
                    table.failures.push(CellFailure {
                        cell: cell.name(),
                        error: format!("{name}_{} is not finite", agg.suffix()),
                    });
                    continue;
                }
                table.rows.push(ResultRow {
                    dataset: problem.label.clone(),
                    eta: problem.eta,
                    model: cell.model.clone(),
                    sampler: cell.sampler.clone(),
                    c: cell.c,
                    metric: format!("{name}_{}", agg.suffix()),
                    value,
                    elapsed_seconds: mean(&fit_seconds),
                    sampling_seconds: mean(&sampling_seconds),
                    repeats: values.len(),
                    seeds: cell.seeds.clone(),
                });
            }
        }
    }
    table
}

/// Per-repeat seed of a selection; independent of the model so that all
/// models in a repeat share one selection.
pub fn selection_seed(base: u64, sampler: SamplerKind, c: usize, repeat: usize) -> RngSeed {
    RngSeed::new(base)
        .derive(sampler.tag())
        .derive(c as u64)
        .derive(repeat as u64)
}

fn model_tag(model: ModelKind) -> u64 {
    100 + ModelKind::ALL.iter().position(|&m| m == model).unwrap_or(0) as u64
}

fn seed_label(base: u64, path: &str, repeats: usize) -> String {
    format!("{base}:{path}/r0-{}", repeats.saturating_sub(1))
}

pub fn draw_selection(
    sampler: SamplerKind,
    oracle: &(impl KernelMatrix + ?Sized),
    c: usize,
    subsample: Option<usize>,
    seed: RngSeed,
) -> colsketch::Result<ColumnSelection> {
    let n = oracle.size();
    match sampler {
        SamplerKind::Uniform => uniform_sample(n, c, seed),
        SamplerKind::UniformAdaptive2 => {
            uniform_adaptive2_with_counts(oracle, StageCounts::split_total(c), seed)
        }
        SamplerKind::IncompleteUniformAdaptive2 => {
            let sub = subsample.unwrap_or_else(|| default_subsample(c, n)).min(n);
            incomplete_uniform_adaptive2(oracle, StageCounts::split_total(c), sub, seed)
        }
    }
}

fn fit_params(cfg: &ExperimentConfig, c: usize, initial_delta: f64, seed: RngSeed) -> FitParams {
    FitParams {
        sketch_size: Some((cfg.faster.sketch_factor * c as f64).ceil() as usize),
        initial_delta,
        ss: SsOptions {
            orthonormalize: cfg.ss.orthonormalize,
        },
        weighting: cfg.faster.weighting,
        seed,
    }
}

/// Initial shift for `model`. The faster SS model only takes a fixed value:
/// estimating the shift would observe all of `K` and break its entry budget.
fn initial_delta(
    cfg: &ExperimentConfig,
    model: ModelKind,
    oracle: &(impl KernelMatrix + ?Sized),
    k: usize,
    exact: Option<f64>,
    seed: RngSeed,
) -> colsketch::Result<f64> {
    match (model, cfg.ss.initial_delta) {
        (ModelKind::Ss | ModelKind::FasterSs, InitialDelta::Fixed(d)) => Ok(d),
        (ModelKind::Ss, InitialDelta::Exact) => exact.ok_or_else(|| {
            colsketch::Error::InvalidInput("exact initial delta was not computed".into())
        }),
        (ModelKind::Ss, InitialDelta::Approx) => {
            let n = oracle.size();
            let l = (cfg.ss.oversampling * k).clamp(k, n);
            delta_bar_approx(oracle, k, l, seed)
        }
        _ => Ok(0.0),
    }
}

fn exact_delta(cfg: &ExperimentConfig, problem: &Problem, k: usize) -> Result<Option<f64>> {
    if cfg.models.contains(&ModelKind::Ss) && cfg.ss.initial_delta == InitialDelta::Exact {
        Ok(Some(delta_bar_exact(&problem.dense()?, k)?))
    } else {
        Ok(None)
    }
}

/// One fitted model of one repeat, with time and entry accounting.
struct Fitted {
    factor: Factor,
    fit_seconds: f64,
    fit_entries: u64,
}

fn fit_one(
    cfg: &ExperimentConfig,
    model: ModelKind,
    oracle: &(impl KernelMatrix + ?Sized),
    selection: &ColumnSelection,
    k: usize,
    exact: Option<f64>,
    seed: RngSeed,
) -> colsketch::Result<Fitted> {
    let start = Instant::now();
    let before = oracle.counters().entries();
    let delta = initial_delta(
        cfg,
        model,
        oracle,
        k,
        exact,
        seed.derive(model_tag(model)).derive(1),
    )?;
    let params = fit_params(
        cfg,
        selection.distinct().len(),
        delta,
        seed.derive(model_tag(model)),
    );
    let (factor, _) = fit(model, oracle, selection, &params)?;
    Ok(Fitted {
        factor,
        fit_seconds: start.elapsed().as_secs_f64(),
        fit_entries: oracle.counters().entries() - before,
    })
}

struct Drawn {
    selection: ColumnSelection,
    seconds: f64,
    entries: u64,
}

fn draw_timed(
    sampler: SamplerKind,
    oracle: &(impl KernelMatrix + ?Sized),
    c: usize,
    subsample: Option<usize>,
    seed: RngSeed,
) -> colsketch::Result<Drawn> {
    let start = Instant::now();
    let before = oracle.counters().entries();
    let selection = draw_selection(sampler, oracle, c, subsample, seed)?;
    Ok(Drawn {
        selection,
        seconds: start.elapsed().as_secs_f64(),
        entries: oracle.counters().entries() - before,
    })
}

/// Runs `per_repeat` for every (sampler, c) group and repeat. The closure
/// gets the oracle, the drawn selection and the repeat seed and returns one
/// outcome per model, in `cfg.models` order.
fn model_sweep<F>(
    cfg: &ExperimentConfig,
    problem: &Problem,
    cs: &[usize],
    repeats: usize,
    per_model: F,
) -> Result<Table>
where
    F: Fn(&dyn KernelMatrix, ModelKind, &Drawn, RngSeed) -> Outcome + Sync,
{
    let groups: Vec<(SamplerKind, usize)> = cfg
        .samplers
        .iter()
        .flat_map(|&s| cs.iter().map(move |&c| (s, c)))
        .collect();
    let outcomes: Vec<Result<Vec<Vec<Outcome>>>> = groups
        .par_iter()
        .map(|&(sampler, c)| {
            let oracle = problem.oracle()?;
            let mut per_repeat = Vec::with_capacity(repeats);
            for r in 0..repeats {
                let seed = selection_seed(cfg.seed, sampler, c, r);
                let row: Vec<Outcome> = match draw_timed(sampler, &*oracle, c, cfg.subsample, seed)
                {
                    Ok(drawn) => cfg
                        .models
                        .iter()
                        .map(|&m| per_model(&*oracle, m, &drawn, seed))
                        .collect(),
                    Err(e) => cfg
                        .models
                        .iter()
                        .map(|_| Err(format!("sampling: {e}")))
                        .collect(),
                };
                per_repeat.push(row);
            }
            Ok(per_repeat)
        })
        .collect();

    let mut cells = Vec::new();
    for (&(sampler, c), outcome) in groups.iter().zip(outcomes) {
        let seeds = seed_label(cfg.seed, &format!("{}/c{c}", sampler.name()), repeats);
        let mut group: Vec<Cell> = cfg
            .models
            .iter()
            .map(|m| Cell::new(m.name(), sampler.name(), c, seeds.clone()))
            .collect();
        match outcome {
            Ok(per_repeat) => {
                for row in per_repeat {
                    for (cell, o) in group.iter_mut().zip(row) {
                        cell.push(o);
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for cell in &mut group {
                    cell.push(Err(msg.clone()));
                }
            }
        }
        cells.extend(group);
    }
    Ok(finish(problem, cells))
}

/// Minimum (and mean, median) relative approximation error over repeats,
/// with the mean fit and sampling times.
pub fn run_error_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    error_sweep_on(cfg, &problem)
}

pub fn error_sweep_on(cfg: &ExperimentConfig, problem: &Problem) -> Result<Table> {
    let cs = cfg.c_grid.resolve(problem.n)?;
    let k = cfg.rank_for(problem.n);
    let exact = exact_delta(cfg, problem, k)?;
    model_sweep(
        cfg,
        problem,
        &cs,
        cfg.repeats,
        |oracle, model, drawn, seed| {
            let fitted = fit_one(cfg, model, oracle, &drawn.selection, k, exact, seed)
                .map_err(|e| e.to_string())?;
            let err = approx_error_streaming(oracle, &fitted.factor).map_err(|e| e.to_string())?;
            Ok(Sample {
                metrics: vec![
                    ("approx_error", err),
                    ("fit_entries", fitted.fit_entries as f64),
                    ("sampling_entries", drawn.entries as f64),
                ],
                fit_seconds: fitted.fit_seconds,
                sampling_seconds: drawn.seconds,
            })
        },
    )
}

/// Average misalignment between the true top-k eigenvectors and those of
/// each approximation.
pub fn run_misalignment_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    misalignment_sweep_on(cfg, &problem)
}

pub fn misalignment_sweep_on(cfg: &ExperimentConfig, problem: &Problem) -> Result<Table> {
    let cs = cfg.c_grid.resolve(problem.n)?;
    let k = cfg.rank_for(problem.n);
    let km = cfg.misalignment.k;
    let dense = problem.dense()?;
    let u_true = top_eigenvectors(&dense, km)?;
    let exact = match cfg.ss.initial_delta {
        InitialDelta::Exact if cfg.models.contains(&ModelKind::Ss) => {
            Some(delta_bar_exact(&dense, k)?)
        }
        _ => None,
    };
    drop(dense);
    let repeats = cfg.misalignment.repeats.unwrap_or(cfg.repeats);
    model_sweep(cfg, problem, &cs, repeats, |oracle, model, drawn, seed| {
        let fitted = fit_one(cfg, model, oracle, &drawn.selection, k, exact, seed)
            .map_err(|e| e.to_string())?;
        let v = approx_eig(&fitted.factor)
            .and_then(|e| e.top_vectors(km))
            .map_err(|e| e.to_string())?;
        let m = misalignment(&u_true, &v).map_err(|e| e.to_string())?;
        Ok(Sample {
            metrics: vec![("misalignment", m)],
            fit_seconds: fitted.fit_seconds,
            sampling_seconds: drawn.seconds,
        })
    })
}

/// Random train/test split of `data`, seeded.
pub fn split(data: &Dataset, train_fraction: f64, seed: RngSeed) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(HarnessError::Config(
            "need at least two points to split".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng());
    let (train, test) = idx.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// GPR on repeated train/test splits: mean test MSE, mean fit time and mean
/// `nnz(C) + nnz(U)`.
pub fn run_gpr_benchmark(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    gpr_benchmark_on(cfg, &problem)
}

pub fn gpr_benchmark_on(cfg: &ExperimentConfig, problem: &Problem) -> Result<Table> {
    let (data, kernel) = problem.points().ok_or_else(|| {
        HarnessError::Config("GPR needs a dataset source, not an explicit matrix".into())
    })?;
    if data.labels().is_none() {
        return Err(HarnessError::Config("GPR needs a labeled dataset".into()));
    }
    let sigma2 = cfg.kernel.noise_variance;
    let base = RngSeed::new(cfg.seed).derive(0x6770);
    let splits: Vec<(Arc<Dataset>, Dataset)> = (0..cfg.repeats)
        .map(|r| {
            split(data, cfg.gpr.train_fraction, base.derive(r as u64))
                .map(|(a, b)| (Arc::new(a), b))
        })
        .collect::<Result<_>>()?;
    let n_train = splits[0].0.len();
    let cs = cfg.c_grid.resolve(n_train)?;
    let k = cfg.rank_for(n_train);
    let options = problem.options();

    let mut units: Vec<(usize, Option<(SamplerKind, usize)>)> = Vec::new();
    for r in 0..cfg.repeats {
        if cfg.gpr.exact_baseline {
            units.push((r, None));
        }
        for &s in &cfg.samplers {
            for &c in &cs {
                units.push((r, Some((s, c))));
            }
        }
    }

    let predict =
        |train: &Arc<Dataset>, test: &Dataset, factor: Option<&Factor>| -> colsketch::Result<f64> {
            let model = match factor {
                Some(f) => gpr_fit(train.clone(), kernel, f, sigma2)?,
                None => dense_gpr_fit(train.clone(), kernel, sigma2)?,
            };
            let pred = model.predict_all(test)?;
            mse(test.labels().expect("split keeps labels"), &pred)
        };

    let outcomes: Vec<Vec<Outcome>> = units
        .par_iter()
        .map(|&(r, cell)| {
            let (train, test) = &splits[r];
            let oracle: KernelOracle<Rbf> =
                KernelOracle::new(train.clone(), kernel).with_options(options);
            match cell {
                None => {
                    let start = Instant::now();
                    let out = if n_train > options.full_cap {
                        Err(format!(
                            "exact baseline needs n = {n_train} <= full_cap = {}",
                            options.full_cap
                        ))
                    } else {
                        predict(train, test, None).map_err(|e| e.to_string())
                    };
                    vec![out.map(|m| Sample {
                        metrics: vec![("mse", m), ("nnz", (n_train * n_train) as f64)],
                        fit_seconds: start.elapsed().as_secs_f64(),
                        sampling_seconds: 0.0,
                    })]
                }
                Some((sampler, c)) => {
                    let seed = selection_seed(cfg.seed, sampler, c, r);
                    match draw_timed(sampler, &oracle, c, cfg.subsample, seed) {
                        Err(e) => cfg
                            .models
                            .iter()
                            .map(|_| Err(format!("sampling: {e}")))
                            .collect(),
                        Ok(drawn) => cfg
                            .models
                            .iter()
                            .map(|&m| {
                                let start = Instant::now();
                                let fitted =
                                    fit_one(cfg, m, &oracle, &drawn.selection, k, None, seed)
                                        .map_err(|e| e.to_string())?;
                                let err = predict(train, test, Some(&fitted.factor))
                                    .map_err(|e| e.to_string())?;
                                Ok(Sample {
                                    metrics: vec![
                                        ("mse", err),
                                        ("nnz", fitted.factor.nnz() as f64),
                                    ],
                                    fit_seconds: start.elapsed().as_secs_f64(),
                                    sampling_seconds: drawn.seconds,
                                })
                            })
                            .collect(),
                    }
                }
            }
        })
        .collect();

    let split_seeds = |path: &str| seed_label(cfg.seed, &format!("split/{path}"), cfg.repeats);
    let mut cells: Vec<Cell> = Vec::new();
    if cfg.gpr.exact_baseline {
        cells.push(Cell::new("exact", "none", n_train, split_seeds("exact")));
    }
    for &s in &cfg.samplers {
        for &c in &cs {
            for m in &cfg.models {
                cells.push(Cell::new(
                    m.name(),
                    s.name(),
                    c,
                    split_seeds(&format!("{}/c{c}", s.name())),
                ));
            }
        }
    }
    // Units are repeat-major with the same cell order inside every repeat.
    let per_repeat = cells.len();
    for (i, unit) in outcomes.into_iter().flatten().enumerate() {
        cells[i % per_repeat].push(unit);
    }
    Ok(finish(problem, cells))
}

/// Mean `|δ̄ - δ̃| / δ̄` of the randomized shift estimate over an `l / k` grid.
pub fn run_delta_accuracy(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.validate()?;
    let problem = Problem::build(cfg)?;
    delta_accuracy_on(cfg, &problem)
}

/// Relative estimator error. When the exact shift is numerically zero the
/// error is measured against the mean eigenvalue instead.
pub fn delta_error_ratio(exact: f64, estimate: f64, mean_eigenvalue: f64) -> f64 {
    let floor = 1e-12 * mean_eigenvalue.abs();
    if exact > floor {
        (exact - estimate).abs() / exact
    } else if mean_eigenvalue > 0.0 {
        (exact - estimate).abs() / mean_eigenvalue
    } else {
        (exact - estimate).abs()
    }
}

pub fn delta_accuracy_on(cfg: &ExperimentConfig, problem: &Problem) -> Result<Table> {
    let n = problem.n;
    let k = cfg.rank_for(n);
    if k >= n {
        return Err(HarnessError::Config(format!(
            "k = {k} must be below n = {n}"
        )));
    }
    let dense: Matrix = problem.dense()?;
    let exact = delta_bar_exact(&dense, k)?;
    let mean_eig = dense.trace() / n as f64;
    drop(dense);
    let mut ls: Vec<usize> = cfg.delta.lk_ratios.iter().map(|r| (r * k).min(n)).collect();
    ls.dedup();
    let repeats = cfg.delta.repeats;

    let outcomes: Vec<Result<Vec<Outcome>>> = ls
        .par_iter()
        .map(|&l| {
            let oracle = problem.oracle()?;
            Ok((0..repeats)
                .map(|r| {
                    let seed = RngSeed::new(cfg.seed)
                        .derive(0xde17a)
                        .derive(l as u64)
                        .derive(r as u64);
                    let start = Instant::now();
                    let est = delta_bar_approx(&*oracle, k, l, seed).map_err(|e| e.to_string())?;
                    Ok(Sample {
                        metrics: vec![
                            ("delta_error_ratio", delta_error_ratio(exact, est, mean_eig)),
                            ("delta_error_bound", k as f64 / (l as f64).sqrt()),
                        ],
                        fit_seconds: start.elapsed().as_secs_f64(),
                        sampling_seconds: 0.0,
                    })
                })
                .collect())
        })
        .collect();

    let mut cells = Vec::new();
    for (&l, outcome) in ls.iter().zip(outcomes) {
        let mut cell = Cell::new(
            "ss",
            "gaussian_sketch",
            l,
            seed_label(cfg.seed, &format!("delta/l{l}"), repeats),
        );
        match outcome {
            Ok(samples) => samples.into_iter().for_each(|o| cell.push(o)),
            Err(e) => cell.push(Err(e.to_string())),
        }
        cells.push(cell);
    }
    Ok(finish(problem, cells))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
        assert_eq!(Agg::Min.apply(&[2.0, -1.0, 3.0]), -1.0);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn delta_ratio_handles_zero_shift() {
        assert_eq!(delta_error_ratio(0.5, 0.25, 1.0), 0.5);
        assert_eq!(delta_error_ratio(0.0, 1e-3, 2.0), 5e-4);
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let data = colsketch::kernel::synthetic::regression(50, 2, 0.1, 1);
        let (a, b) = split(&data, 0.8, RngSeed::new(3)).unwrap();
        assert_eq!((a.len(), b.len()), (40, 10));
        let (a2, _) = split(&data, 0.8, RngSeed::new(3)).unwrap();
        assert_eq!(a.labels(), a2.labels());
        let (a3, _) = split(&data, 0.8, RngSeed::new(4)).unwrap();
        assert_ne!(a.labels(), a3.labels());
    }
}
