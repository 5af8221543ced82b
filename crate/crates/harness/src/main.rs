use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use colsketch_harness::source::{load_dataset, resolve_gamma, ETA_FRACTION};
use colsketch_harness::{
    compare_with_recorded, execute, rerun, Command, ExperimentConfig, RunOutput,
};

#[derive(Parser)]
#[command(
    name = "colsketch",
    version,
    about = "Column-sampling kernel approximation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Approximation error against c for every (model, sampler).
    ErrorSweep(RunArgs),
    /// Misalignment of the approximate top-k eigenvectors against c.
    MisalignmentSweep(RunArgs),
    /// Gaussian process regression on repeated train/test splits.
    GprBench(RunArgs),
    /// Error of the randomized shift estimate against l/k.
    DeltaAccuracy(RunArgs),
    /// Find the RBF bandwidth that gives the configured target eta.
    CalibrateGamma(RunArgs),
    /// Repeat a recorded run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to a `rerun` directory next to the manifest.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Compare against the recorded tables and fail on any difference.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        keep_going: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives single-threaded timings.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Exit successfully even if some cells failed.
    #[arg(long)]
    keep_going: bool,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(b) = self.block_size {
            cfg.block_size = Some(b);
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        cfg.validate()?;
        let out = cfg
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("results"));
        Ok((cfg, out))
    }
}

fn report(out: &RunOutput, keep_going: bool) -> ExitCode {
    println!(
        "{} rows, {} failed cells -> {}",
        out.table.rows.len(),
        out.table.failures.len(),
        out.manifest_path.display()
    );
    for f in &out.table.failures {
        eprintln!("cell {} failed: {}", f.cell, f.error);
    }
    if out.table.failures.is_empty() || keep_going {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn calibrate(args: &RunArgs) -> anyhow::Result<()> {
    let (cfg, out_dir) = args.load()?;
    let Some(data) = load_dataset(&cfg.data)? else {
        bail!("calibration needs a dataset source");
    };
    if cfg.kernel.target_eta.is_none() {
        bail!("calibration needs kernel.target_eta");
    }
    let data = std::sync::Arc::new(data);
    let (gamma, eta) = resolve_gamma(&cfg, &data)?;
    let result = serde_json::json!({
        "gamma": gamma,
        "eta": eta,
        "target_eta": cfg.kernel.target_eta,
        "eta_fraction": ETA_FRACTION,
        "n": data.len(),
    });
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("calibration.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
    println!("{result}");
    Ok(())
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::ErrorSweep(a) => (Command::ErrorSweep, a),
        Cmd::MisalignmentSweep(a) => (Command::MisalignmentSweep, a),
        Cmd::GprBench(a) => (Command::GprBench, a),
        Cmd::DeltaAccuracy(a) => (Command::DeltaAccuracy, a),
        Cmd::CalibrateGamma(a) => {
            calibrate(&a)?;
            return Ok(ExitCode::SUCCESS);
        }
        Cmd::Rerun {
            manifest,
            output_dir,
            threads,
            verify,
            keep_going,
        } => {
            let dir = output_dir
                .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("rerun"));
            let out = rerun(&manifest, &dir, threads)?;
            if verify {
                let diffs = compare_with_recorded(&manifest, &out.table)?;
                if !diffs.is_empty() {
                    for d in &diffs {
                        eprintln!("{d}");
                    }
                    bail!("{} differences against the recorded run", diffs.len());
                }
                println!("rerun matches the recorded tables");
            }
            return Ok(report(&out, keep_going));
        }
    };
    let (cfg, out_dir) = args.load()?;
    let out = execute(command, &cfg, &out_dir, args.threads)?;
    Ok(report(&out, args.keep_going))
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
