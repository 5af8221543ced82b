//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use colsketch::downstream::{
    approx_eig, dense_gpr_fit, dense_regularized_solve, gpr_fit, smw_solve,
};
use colsketch::kernel::{
    calibrate_gamma, synthetic, CalibrationOptions, DenseOracle, KernelMatrix, KernelOracle, Rbf,
};
use colsketch::linalg::{self, Matrix, Vector};
use colsketch::models::{
    delta_bar_approx, delta_bar_exact, faster_fit, nystrom_fit, objective, prototype_fit, ss_fit,
    testmat, Approximation, Factor, ShiftedFactor, SsOptions,
};
use colsketch::sampling::{uniform_sample, ColumnSelection, RngSeed};
use colsketch_harness::config::ExperimentConfig;
use colsketch_harness::table::read_csv;
use colsketch_harness::{execute, rerun, Command, Table};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn geometric_matrix() -> Matrix {
    testmat::spectrum_matrix(&testmat::geometric_spectrum(100, 1.05), 1)
}

/// RBF matrix on clustered points with calibrated bandwidth.
fn rbf_matrix(n: usize, eta: f64, seed: u64) -> Result<(Matrix, f64), String> {
    let data = Arc::new(synthetic::clustered_points(n, 4, 5, 0.15, seed));
    let cal = calibrate_gamma(&data, eta, &CalibrationOptions::default()).map_err(err)?;
    let oracle = KernelOracle::rbf(data, cal.gamma).map_err(err)?;
    Ok((oracle.full().map_err(err)?, cal.eta))
}

fn delta_bar_golden() -> Outcome {
    let k = geometric_matrix();
    let dbar = delta_bar_exact(&k, 30).map_err(err)?;
    let tail = (&k - linalg::best_rank_k(&k, 30).map_err(err)?).norm_squared();
    let shifted = &k - Matrix::identity(100, 100) * dbar;
    let shifted_tail = (&shifted - linalg::best_rank_k(&shifted, 30).map_err(err)?).norm_squared();
    check((dbar - 0.064).abs() <= 0.001, || {
        format!("delta bar {dbar}")
    })?;
    check((tail - 0.52).abs() <= 0.01, || {
        format!("tail energy {tail}")
    })?;
    check(shifted_tail <= 0.24, || {
        format!("shifted tail energy {shifted_tail}")
    })?;
    Ok(format!(
        "delta={dbar:.5} tail={tail:.4} shifted_tail={shifted_tail:.4}"
    ))
}

fn low_rank_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let k = testmat::random_low_rank_spsd(60, 8, seed);
        let oracle = DenseOracle::new(k.clone()).map_err(err)?;
        for c in [8, 12] {
            let mut attempt = 0;
            let sel = loop {
                let sel =
                    uniform_sample(60, c, RngSeed::new(seed).derive(c as u64).derive(attempt))
                        .map_err(err)?;
                let w = oracle.submatrix(&sel.indices, &sel.indices).map_err(err)?;
                if linalg::numerical_rank(&w).map_err(err)? == 8 {
                    break sel;
                }
                attempt += 1;
            };
            for f in [prototype_fit(&oracle, &sel), nystrom_fit(&oracle, &sel)] {
                let e = rel(&f.map_err(err)?.reconstruct(), &k);
                worst = worst.max(e);
            }
        }
    }
    check(worst <= 1e-8, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.2e} over 200 fits"))
}

struct Instance {
    k: Matrix,
    sel: ColumnSelection,
    pd: bool,
}

/// 30 small SPSD instances; even seeds are positive definite.
fn small_suite() -> Vec<Instance> {
    (0..30u64)
        .map(|seed| {
            let mut rng = RngSeed::new(seed).derive(3).rng();
            let n = rng.random_range(8..=20);
            let c = rng.random_range(2..=6);
            let pd = seed % 2 == 0;
            let k = if pd {
                testmat::random_spsd(n, seed)
            } else {
                testmat::random_low_rank_spsd(n, (c + 3).min(n - 1), seed)
            };
            let sel = uniform_sample(n, c, RngSeed::new(seed).derive(4)).expect("c <= n");
            Instance { k, sel, pd }
        })
        .collect()
}

fn ss_optimality_and_psd() -> Outcome {
    let mut fewest_margin = f64::INFINITY;
    for (i, inst) in small_suite().into_iter().enumerate() {
        let oracle = DenseOracle::new(inst.k.clone()).map_err(err)?;
        let k0 = inst.sel.distinct().len();
        let delta0 = delta_bar_exact(&inst.k, k0).map_err(err)?;
        let ss = ss_fit(&oracle, &inst.sel, delta0, SsOptions::default()).map_err(err)?;
        let best = objective(&inst.k, &ss);
        let scale = inst.k.norm_squared();
        let mut rng = RngSeed::new(i as u64).derive(5).rng();
        let c = ss.u.nrows();
        for _ in 0..500 {
            let eps = 10f64.powf(rng.random_range(-6.0..0.0)) * (1.0 + ss.u.amax());
            let e = Matrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
            let e = linalg::symmetrize(&e);
            let pert = ShiftedFactor {
                c: ss.c.clone(),
                u: &ss.u + e * eps,
                delta: ss.delta + eps * rng.random_range(-1.0..1.0),
                orthonormalized: ss.orthonormalized,
            };
            let obj = objective(&inst.k, &pert);
            check(obj >= best - 1e-12 * scale, || {
                format!("instance {i}: perturbation reached {obj:e} below optimum {best:e}")
            })?;
            fewest_margin = fewest_margin.min((obj - best) / scale);
        }
        let rec = ss.reconstruct();
        let min_eig = *linalg::sym_eigenvalues(&rec).map_err(err)?.last().unwrap();
        let knorm = linalg::spectral_norm(&inst.k).map_err(err)?;
        check(min_eig >= -1e-8 * knorm, || {
            format!("instance {i}: min eigenvalue {min_eig:e}")
        })?;
        if inst.pd {
            check(min_eig > 0.0, || {
                format!("instance {i}: PD input gave min eigenvalue {min_eig:e}")
            })?;
        }
    }
    Ok(format!(
        "30 instances x 500 perturbations, smallest relative gap {fewest_margin:.2e}"
    ))
}

fn ss_dominates_prototype() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for (i, inst) in small_suite().into_iter().enumerate() {
        let oracle = DenseOracle::new(inst.k.clone()).map_err(err)?;
        for opts in [
            SsOptions::default(),
            SsOptions {
                orthonormalize: false,
            },
        ] {
            let ss = objective(
                &inst.k,
                &ss_fit(&oracle, &inst.sel, 0.0, opts).map_err(err)?,
            );
            let proto = objective(&inst.k, &prototype_fit(&oracle, &inst.sel).map_err(err)?);
            let gap = (ss - proto) / proto.max(f64::MIN_POSITIVE);
            worst = worst.max(gap);
            check(ss <= proto * (1.0 + 1e-10) + 1e-300, || {
                format!("instance {i}: ss {ss:e} > prototype {proto:e}")
            })?;
        }
    }
    Ok(format!(
        "largest (ss - prototype) / prototype = {worst:.2e}"
    ))
}

fn estimator_mean(k: &Matrix, rank: usize, l: usize, seeds: u64) -> Result<f64, String> {
    let exact = delta_bar_exact(k, rank).map_err(err)?;
    let oracle = DenseOracle::new(k.clone()).map_err(err)?;
    let mut total = 0.0;
    for s in 0..seeds {
        let est =
            delta_bar_approx(&oracle, rank, l, RngSeed::new(s).derive(l as u64)).map_err(err)?;
        total += (exact - est).abs() / exact;
    }
    Ok(total / seeds as f64)
}

fn shift_estimator() -> Outcome {
    let geo = geometric_matrix();
    let (half, eta_half) = rbf_matrix(400, 0.5, 11)?;
    let (ninety, eta_ninety) = rbf_matrix(400, 0.9, 11)?;
    let mut parts = Vec::new();
    for (name, m) in [("geometric", &geo), ("rbf-0.5", &half)] {
        for l in [40, 90] {
            let mean = estimator_mean(m, 10, l, 50)?;
            let bound = 10.0 / (l as f64).sqrt();
            check(mean <= bound, || {
                format!("{name} l={l}: mean ratio {mean} > {bound}")
            })?;
            parts.push(format!("{name}/l{l}={mean:.4}"));
        }
    }
    for (name, m, eta) in [
        ("rbf-0.5", &half, eta_half),
        ("rbf-0.9", &ninety, eta_ninety),
    ] {
        for k in [4, 10] {
            let mean = estimator_mean(m, k, 4 * k, 50)?;
            check(mean < 0.03, || {
                format!("{name} (eta {eta:.3}) k={k} l=4k: mean ratio {mean}")
            })?;
            parts.push(format!("{name}/k{k}/l4k={mean:.4}"));
        }
    }
    Ok(parts.join(" "))
}

fn block_matrix_tail() -> Outcome {
    let mut worst: f64 = 0.0;
    for (n, k, alpha) in [(8, 2, 0.5), (30, 3, 0.9), (100, 10, 0.99)] {
        let a = testmat::make_block_unit_matrix(n, k, alpha).map_err(err)?;
        let tail = (&a - linalg::best_rank_k(&a, k).map_err(err)?).norm();
        let want = (1.0 - alpha) * ((n - k) as f64).sqrt();
        worst = worst.max((tail - want).abs());
        check((tail - want).abs() <= 1e-10, || {
            format!("(n={n}, k={k}, alpha={alpha}): {tail} vs {want}")
        })?;
    }
    Ok(format!("largest deviation {worst:.2e}"))
}

fn flat_tail_recovery() -> Outcome {
    let (n, k, theta) = (80, 5, 1.0);
    let kmat =
        testmat::make_flat_tail_matrix(n, k, &[7.0, 6.0, 5.0, 4.0, 3.0], theta, 2).map_err(err)?;
    let shifted = &kmat - Matrix::identity(n, n) * theta;
    let mut cols: Vec<usize> = Vec::new();
    for j in 0..n {
        let mut trial = cols.clone();
        trial.push(j);
        let sub = Matrix::from_fn(n, trial.len(), |i, c| shifted[(i, trial[c])]);
        if linalg::numerical_rank(&sub).map_err(err)? > cols.len() {
            cols = trial;
        }
        if cols.len() == k {
            break;
        }
    }
    check(cols.len() == k, || {
        format!("only reached rank {}", cols.len())
    })?;
    let c = cols.len();
    let sel = ColumnSelection::unweighted(cols);
    let oracle = DenseOracle::new(kmat.clone()).map_err(err)?;
    let delta0 = delta_bar_exact(&kmat, k).map_err(err)?;
    let ss = ss_fit(&oracle, &sel, delta0, SsOptions::default()).map_err(err)?;
    let ss_err = rel(&ss.reconstruct(), &kmat);
    let proto_err = rel(
        &prototype_fit(&oracle, &sel).map_err(err)?.reconstruct(),
        &kmat,
    );
    let floor = ((n - c) as f64).sqrt() * theta / kmat.norm();
    check(ss_err <= 1e-6, || format!("ss relative error {ss_err:e}"))?;
    check(proto_err >= floor - 1e-6, || {
        format!("prototype error {proto_err} below {floor}")
    })?;
    Ok(format!(
        "ss error {ss_err:.2e}, prototype error {proto_err:.4} >= {floor:.4}"
    ))
}

fn faster_quality() -> Outcome {
    let (k, _) = rbf_matrix(300, 0.5, 21)?;
    let oracle = DenseOracle::new(k.clone()).map_err(err)?;
    let mut within = 0;
    let mut ratios = Vec::new();
    for seed in 0..50u64 {
        let sel = uniform_sample(300, 10, RngSeed::new(seed)).map_err(err)?;
        let proto = objective(&k, &prototype_fit(&oracle, &sel).map_err(err)?);
        let fast = objective(
            &k,
            &faster_fit(&oracle, &sel, 120, RngSeed::new(seed).derive(9)).map_err(err)?,
        );
        let ratio = fast / proto;
        ratios.push(ratio);
        if ratio <= 1.5 {
            within += 1;
        }
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    check(within >= 45, || {
        format!("only {within}/50 within 1.5x (worst {worst:.3})")
    })?;
    Ok(format!("{within}/50 within 1.5x, worst ratio {worst:.3}"))
}

fn downstream_oracles() -> Outcome {
    let mut rng = RngSeed::new(77).rng();
    let mut worst_solve: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    for (n, c) in [(100, 12), (300, 20)] {
        let k = testmat::random_spsd(n, n as u64);
        let oracle = DenseOracle::new(k).map_err(err)?;
        let sel = uniform_sample(n, c, RngSeed::new(n as u64)).map_err(err)?;
        let factors: Vec<Factor> = vec![
            prototype_fit(&oracle, &sel).map_err(err)?.into(),
            nystrom_fit(&oracle, &sel).map_err(err)?.into(),
            ss_fit(&oracle, &sel, 0.01, SsOptions::default())
                .map_err(err)?
                .into(),
            ss_fit(
                &oracle,
                &sel,
                0.01,
                SsOptions {
                    orthonormalize: false,
                },
            )
            .map_err(err)?
            .into(),
        ];
        let y = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for f in &factors {
            let dense = f.reconstruct();
            worst_eig = worst_eig.max(rel(&approx_eig(f).map_err(err)?.reconstruct(), &dense));
            for alpha in [0.01, 0.1, 1.0] {
                let b = smw_solve(f, alpha, &y).map_err(err)?;
                let want = dense_regularized_solve(&dense, alpha, &y).map_err(err)?;
                worst_solve = worst_solve.max((&b - &want).norm() / want.norm());
            }
        }
    }
    check(worst_solve <= 1e-8, || {
        format!("solve mismatch {worst_solve:e}")
    })?;
    check(worst_eig <= 1e-8, || {
        format!("eigendecomposition mismatch {worst_eig:e}")
    })?;

    let train = Arc::new(synthetic::regression(100, 3, 0.1, 5));
    let test = synthetic::regression(40, 3, 0.1, 6);
    let kernel = Rbf::new(0.5).map_err(err)?;
    let oracle = KernelOracle::new(train.clone(), kernel);
    let all = ColumnSelection::unweighted((0..100).collect());
    let f = prototype_fit(&oracle, &all).map_err(err)?;
    let approx = gpr_fit(train.clone(), kernel, &f, 0.05)
        .map_err(err)?
        .predict_all(&test)
        .map_err(err)?;
    let exact = dense_gpr_fit(train, kernel, 0.05)
        .map_err(err)?
        .predict_all(&test)
        .map_err(err)?;
    let num = approx
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den = exact.iter().map(|b| b * b).sum::<f64>().sqrt();
    let gpr = num / den;
    check(gpr <= 1e-6, || format!("GPR mismatch {gpr:e}"))?;
    Ok(format!(
        "solve {worst_solve:.1e}, eig {worst_eig:.1e}, gpr {gpr:.1e}"
    ))
}

fn cfg(text: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::from_toml(text).map_err(err)
}

fn row(t: &Table, model: &str, sampler: &str, c: usize, metric: &str) -> Result<f64, String> {
    t.rows
        .iter()
        .find(|r| r.model == model && r.sampler == sampler && r.c == c && r.metric == metric)
        .map(|r| r.value)
        .ok_or_else(|| format!("missing row {model}/{sampler}/c={c}/{metric}"))
}

fn sampler_and_misalignment_ordering() -> Outcome {
    let errors = colsketch_harness::sweeps::run_error_sweep(&cfg(r#"
        models = ["prototype"]
        samplers = ["uniform", "uniform_adaptive2"]
        c_grid = { absolute = [8, 16, 32] }
        k = 4
        repeats = 20
        seed = 1
        [data]
        source = "clustered"
        n = 400
        dim = 4
        seed = 11
        [kernel]
        target_eta = 0.5
        "#)?)
    .map_err(err)?;
    check(errors.failures.is_empty(), || {
        format!("{:?}", errors.failures)
    })?;
    let mut parts = Vec::new();
    for c in [8, 16, 32] {
        let u = row(&errors, "prototype", "uniform", c, "approx_error_median")?;
        let a = row(
            &errors,
            "prototype",
            "uniform_adaptive2",
            c,
            "approx_error_median",
        )?;
        check(a <= u, || format!("c={c}: adaptive {a} > uniform {u}"))?;
        parts.push(format!("c{c}: {a:.4}<={u:.4}"));
    }

    let mis = colsketch_harness::sweeps::run_misalignment_sweep(&cfg(r#"
        models = ["prototype", "nystrom"]
        samplers = ["uniform"]
        c_grid = { absolute = [5, 10, 20, 40] }
        repeats = 10
        seed = 2
        [data]
        source = "clustered"
        n = 400
        dim = 4
        seed = 11
        [kernel]
        target_eta = 0.9
        [misalignment]
        k = 3
        "#)?)
    .map_err(err)?;
    check(mis.failures.is_empty(), || format!("{:?}", mis.failures))?;
    for c in [5, 10, 20, 40] {
        let p = row(&mis, "prototype", "uniform", c, "misalignment_median")?;
        let n = row(&mis, "nystrom", "uniform", c, "misalignment_median")?;
        check(p <= n, || {
            format!("misalignment c={c}: prototype {p} > nystrom {n}")
        })?;
        parts.push(format!("mis c{c}: {p:.3}<={n:.3}"));
    }
    Ok(parts.join(" "))
}

fn strip_timing(path: &Path) -> Result<Vec<colsketch_harness::ResultRow>, String> {
    Ok(read_csv(path)
        .map_err(err)?
        .iter()
        .map(|r| r.without_timing())
        .collect())
}

fn rerun_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let runs = [
        (
            Command::ErrorSweep,
            r#"
            models = ["prototype", "nystrom", "faster", "ss", "faster_ss"]
            samplers = ["uniform", "uniform_adaptive2", "incomplete_uniform_adaptive2"]
            c_grid = { absolute = [4, 8] }
            repeats = 3
            seed = 31
            [data]
            source = "clustered"
            n = 150
            dim = 3
            [kernel]
            target_eta = 0.6
            "#,
        ),
        (
            Command::MisalignmentSweep,
            r#"
            models = ["prototype", "ss"]
            samplers = ["uniform_adaptive2"]
            c_grid = { absolute = [6] }
            repeats = 3
            [data]
            source = "geometric"
            n = 80
            "#,
        ),
        (
            Command::GprBench,
            r#"
            models = ["prototype", "ss", "faster"]
            samplers = ["uniform"]
            c_grid = { absolute = [10] }
            repeats = 2
            [data]
            source = "regression"
            n = 120
            dim = 3
            [kernel]
            gamma = 0.4
            "#,
        ),
        (
            Command::DeltaAccuracy,
            r#"
            k = 3
            [data]
            source = "clustered"
            n = 120
            dim = 3
            [kernel]
            gamma = 0.3
            [delta]
            lk_ratios = [2, 4]
            repeats = 5
            "#,
        ),
    ];
    let mut rows = 0;
    for (i, (command, text)) in runs.iter().enumerate() {
        let first = execute(
            *command,
            &cfg(text)?,
            &dir.path().join(format!("run{i}")),
            None,
        )
        .map_err(err)?;
        let again = rerun(
            &first.manifest_path,
            &dir.path().join(format!("rerun{i}")),
            Some(1),
        )
        .map_err(err)?;
        let diffs = first.table.differences(&again.table);
        check(diffs.is_empty(), || {
            format!("{}: {}", command.stem(), diffs.join("; "))
        })?;
        let csv = format!("{}.csv", command.stem());
        let a = strip_timing(&dir.path().join(format!("run{i}")).join(&csv))?;
        let b = strip_timing(&dir.path().join(format!("rerun{i}")).join(&csv))?;
        check(a == b && !a.is_empty(), || {
            format!("{}: CSV files differ", command.stem())
        })?;
        rows += a.len();
    }
    Ok(format!(
        "4 commands, {rows} rows identical after rerun on 1 thread"
    ))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "delta-bar golden value",
            Duration::from_secs(1),
            delta_bar_golden,
        ),
        (
            "exact recovery of low-rank matrices",
            Duration::from_secs(10),
            low_rank_exactness,
        ),
        (
            "ss optimality and PSD",
            Duration::from_secs(30),
            ss_optimality_and_psd,
        ),
        (
            "ss dominates prototype",
            Duration::from_secs(30),
            ss_dominates_prototype,
        ),
        (
            "shift estimator accuracy",
            Duration::from_secs(120),
            shift_estimator,
        ),
        (
            "block matrix tail energy",
            Duration::from_secs(10),
            block_matrix_tail,
        ),
        (
            "flat tail exact ss recovery",
            Duration::from_secs(10),
            flat_tail_recovery,
        ),
        (
            "faster model quality",
            Duration::from_secs(120),
            faster_quality,
        ),
        (
            "downstream oracles",
            Duration::from_secs(60),
            downstream_oracles,
        ),
        (
            "sampler and misalignment ordering",
            Duration::from_secs(300),
            sampler_and_misalignment_ordering,
        ),
        (
            "rerun determinism",
            Duration::from_secs(300),
            rerun_determinism,
        ),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
