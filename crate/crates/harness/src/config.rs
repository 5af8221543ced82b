//! Declarative experiment description, read from a TOML file.

use std::path::{Path, PathBuf};

use colsketch::models::{ModelKind, SketchWeighting};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Where the kernel matrix comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// A LIBSVM file, relative paths resolved against the config file.
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        rescale: bool,
    },
    /// Gaussian clusters in `dim` dimensions, RBF kernel.
    Clustered {
        n: usize,
        dim: usize,
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Labeled points from a smooth target plus noise, RBF kernel.
    Regression {
        n: usize,
        dim: usize,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Explicit matrix with eigenvalues `base^{-t}`, `t = 1..=n`.
    Geometric {
        n: usize,
        #[serde(default = "default_base")]
        base: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Explicit `G Gᵀ` with Gaussian `G` of width `rank`.
    LowRank {
        n: usize,
        rank: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_clusters() -> usize {
    5
}
fn default_spread() -> f64 {
    0.15
}
fn default_noise_sd() -> f64 {
    0.1
}
fn default_base() -> f64 {
    1.05
}

impl DataConfig {
    /// Sources that come with points and therefore need an RBF bandwidth.
    pub fn is_dataset(&self) -> bool {
        matches!(
            self,
            DataConfig::Libsvm { .. }
                | DataConfig::Clustered { .. }
                | DataConfig::Regression { .. }
        )
    }

    pub fn label(&self) -> String {
        match self {
            DataConfig::Libsvm { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "libsvm".into()),
            DataConfig::Clustered { n, dim, .. } => format!("clustered-n{n}-d{dim}"),
            DataConfig::Regression { n, dim, .. } => format!("regression-n{n}-d{dim}"),
            DataConfig::Geometric { n, base, .. } => format!("geometric-n{n}-b{base}"),
            DataConfig::LowRank { n, rank, .. } => format!("lowrank-n{n}-r{rank}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSettings {
    pub gamma: Option<f64>,
    /// Calibrate γ so that the RBF matrix has this η.
    pub target_eta: Option<f64>,
    /// Observation noise σ² for GPR.
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
}

fn default_noise_variance() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    UniformAdaptive2,
    IncompleteUniformAdaptive2,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::UniformAdaptive2 => "uniform_adaptive2",
            SamplerKind::IncompleteUniformAdaptive2 => "incomplete_uniform_adaptive2",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            SamplerKind::Uniform => 1,
            SamplerKind::UniformAdaptive2 => 2,
            SamplerKind::IncompleteUniformAdaptive2 => 3,
        }
    }
}

/// The `c` values to sweep, either as fractions of `n` or absolute counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CGrid {
    Fractions(Vec<f64>),
    Absolute(Vec<usize>),
}

impl Default for CGrid {
    fn default() -> Self {
        CGrid::Fractions(vec![0.01, 0.02, 0.03, 0.04, 0.05])
    }
}

impl CGrid {
    /// Sorted, deduplicated column counts for an `n x n` matrix.
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = match self {
            CGrid::Fractions(fs) => {
                if let Some(f) = fs.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                    return Err(HarnessError::Config(format!(
                        "c fraction {f} is not in (0, 1]"
                    )));
                }
                fs.iter()
                    .map(|f| ((f * n as f64).round() as usize).clamp(1, n))
                    .collect()
            }
            CGrid::Absolute(cs) => {
                if let Some(c) = cs.iter().find(|&&c| c == 0 || c > n) {
                    return Err(HarnessError::Config(format!("c = {c} is not in [1, {n}]")));
                }
                cs.clone()
            }
        };
        if out.is_empty() {
            return Err(HarnessError::Config("empty c grid".into()));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// How the SS models pick their initial shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDelta {
    Zero,
    /// Exact mean of the bottom `n - k` eigenvalues (needs the dense matrix).
    Exact,
    /// Randomized estimate from an `n x (oversampling * k)` Gaussian sketch.
    #[default]
    Approx,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsSettings {
    #[serde(default)]
    pub initial_delta: InitialDelta,
    #[serde(default = "yes")]
    pub orthonormalize: bool,
    /// `l / k` for the randomized shift estimate.
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
}

impl Default for SsSettings {
    fn default() -> Self {
        SsSettings {
            initial_delta: InitialDelta::default(),
            orthonormalize: true,
            oversampling: default_oversampling(),
        }
    }
}

fn yes() -> bool {
    true
}
fn default_oversampling() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FasterSettings {
    /// Row sketch size as a multiple of `c`.
    #[serde(default = "default_sketch_factor")]
    pub sketch_factor: f64,
    #[serde(default)]
    pub weighting: SketchWeighting,
}

impl Default for FasterSettings {
    fn default() -> Self {
        FasterSettings {
            sketch_factor: default_sketch_factor(),
            weighting: SketchWeighting::default(),
        }
    }
}

fn default_sketch_factor() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GprSettings {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Also fit the exact dense GP as a baseline row.
    #[serde(default = "yes")]
    pub exact_baseline: bool,
}

impl Default for GprSettings {
    fn default() -> Self {
        GprSettings {
            train_fraction: default_train_fraction(),
            exact_baseline: true,
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSettings {
    #[serde(default = "default_lk_ratios")]
    pub lk_ratios: Vec<usize>,
    #[serde(default = "default_delta_repeats")]
    pub repeats: usize,
}

impl Default for DeltaSettings {
    fn default() -> Self {
        DeltaSettings {
            lk_ratios: default_lk_ratios(),
            repeats: default_delta_repeats(),
        }
    }
}

fn default_lk_ratios() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}
fn default_delta_repeats() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisalignmentSettings {
    #[serde(default = "default_misalignment_k")]
    pub k: usize,
    /// Falls back to the top-level `repeats`.
    pub repeats: Option<usize>,
}

impl Default for MisalignmentSettings {
    fn default() -> Self {
        MisalignmentSettings {
            k: default_misalignment_k(),
            repeats: None,
        }
    }
}

fn default_misalignment_k() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataConfig,
    #[serde(default)]
    pub kernel: KernelSettings,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerKind>,
    #[serde(default)]
    pub c_grid: CGrid,
    /// Target rank; `ceil(n / 100)` when absent.
    pub k: Option<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub block_size: Option<usize>,
    /// Largest `n` for which the dense matrix may be materialized.
    pub full_cap: Option<usize>,
    /// Uniform pool size for the incomplete sampler.
    pub subsample: Option<usize>,
    #[serde(default)]
    pub ss: SsSettings,
    #[serde(default)]
    pub faster: FasterSettings,
    #[serde(default)]
    pub gpr: GprSettings,
    #[serde(default)]
    pub delta: DeltaSettings,
    #[serde(default)]
    pub misalignment: MisalignmentSettings,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Prototype, ModelKind::Nystrom, ModelKind::Ss]
}
fn default_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Uniform, SamplerKind::UniformAdaptive2]
}
fn default_repeats() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative dataset path is taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let DataConfig::Libsvm { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("no models listed".into());
        }
        if self.samplers.is_empty() {
            return bad("no samplers listed".into());
        }
        if self.k == Some(0) {
            return bad("k must be positive".into());
        }
        if self.block_size == Some(0) {
            return bad("block_size must be positive".into());
        }
        match (
            self.data.is_dataset(),
            self.kernel.gamma,
            self.kernel.target_eta,
        ) {
            (true, Some(_), Some(_)) => {
                return bad("set only one of kernel.gamma and kernel.target_eta".into())
            }
            (true, None, None) => {
                return bad("dataset sources need kernel.gamma or kernel.target_eta".into())
            }
            (false, g, e) if g.is_some() || e.is_some() => {
                return bad("explicit matrix sources take no kernel bandwidth".into())
            }
            _ => {}
        }
        if let Some(g) = self.kernel.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if let Some(e) = self.kernel.target_eta {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("target eta must be in (0, 1), got {e}"));
            }
        }
        if !(self.kernel.noise_variance >= 0.0 && self.kernel.noise_variance.is_finite()) {
            return bad("noise_variance must be nonnegative".into());
        }
        if !(self.gpr.train_fraction > 0.0 && self.gpr.train_fraction < 1.0) {
            return bad("gpr.train_fraction must be in (0, 1)".into());
        }
        if !(self.faster.sketch_factor >= 1.0 && self.faster.sketch_factor.is_finite()) {
            return bad("faster.sketch_factor must be at least 1".into());
        }
        if self.ss.oversampling == 0 {
            return bad("ss.oversampling must be positive".into());
        }
        if let InitialDelta::Fixed(d) = self.ss.initial_delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("fixed initial delta must be nonnegative, got {d}"));
            }
        }
        if self.delta.repeats == 0 || self.delta.lk_ratios.contains(&0) {
            return bad("delta.repeats and delta.lk_ratios must be positive".into());
        }
        if self.misalignment.k == 0 || self.misalignment.repeats == Some(0) {
            return bad("misalignment.k and misalignment.repeats must be positive".into());
        }
        if let DataConfig::LowRank { n, rank, .. } | DataConfig::Clustered { n, dim: rank, .. } =
            self.data
        {
            if n == 0 || rank == 0 {
                return bad("data dimensions must be positive".into());
            }
        }
        Ok(())
    }

    /// Target rank for an `n x n` problem.
    pub fn rank_for(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| n.div_ceil(100)).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [data]
        source = "clustered"
        n = 200
        dim = 3

        [kernel]
        target_eta = 0.5
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.repeats, 10);
        assert_eq!(cfg.rank_for(200), 2);
        assert_eq!(cfg.rank_for(201), 3);
        assert_eq!(cfg.c_grid.resolve(200).unwrap(), vec![2, 4, 6, 8, 10]);
        assert_eq!(cfg.ss.initial_delta, InitialDelta::Approx);
        assert_eq!(
            cfg.models,
            vec![ModelKind::Prototype, ModelKind::Nystrom, ModelKind::Ss]
        );
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            name = "demo"
            models = ["prototype", "faster_ss"]
            samplers = ["incomplete_uniform_adaptive2"]
            c_grid = { absolute = [4, 8] }
            k = 4
            repeats = 3
            seed = 9
            [data]
            source = "geometric"
            n = 50
            [ss]
            initial_delta = { fixed = 0.25 }
            orthonormalize = false
            [faster]
            weighting = "scaled"
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.ss.initial_delta, InitialDelta::Fixed(0.25));
        assert_eq!(cfg.faster.weighting, SketchWeighting::Scaled);
        assert_eq!(cfg.c_grid.resolve(50).unwrap(), vec![4, 8]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let with = |extra: &str| ExperimentConfig::from_toml(&format!("{extra}\n{MINIMAL}"));
        assert!(with("repeats = 0").is_err());
        assert!(with("k = 0").is_err());
        assert!(with("models = []").is_err());
        assert!(with("unknown_key = 1").is_err());
        let explicit_with_gamma = "[data]\nsource = \"geometric\"\nn = 10\n[kernel]\ngamma = 1.0\n";
        assert!(ExperimentConfig::from_toml(explicit_with_gamma).is_err());
        let no_bandwidth = "[data]\nsource = \"clustered\"\nn = 10\ndim = 2\n";
        assert!(ExperimentConfig::from_toml(no_bandwidth).is_err());
    }

    #[test]
    fn c_grid_bounds() {
        assert!(CGrid::Absolute(vec![5, 11]).resolve(10).is_err());
        assert!(CGrid::Absolute(vec![0]).resolve(10).is_err());
        assert!(CGrid::Fractions(vec![1.5]).resolve(10).is_err());
        assert_eq!(
            CGrid::Fractions(vec![0.001, 0.5]).resolve(10).unwrap(),
            vec![1, 5]
        );
    }
}
