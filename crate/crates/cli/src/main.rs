//! `dfk`: acquire data, design controllers, simulate and run Monte Carlo batches from a config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dfk::config::PipelineConfig;
use dfk::design::{read_controllers, sparsity_count, write_controllers};
use dfk::kv::KvBlock;
use dfk::pipeline;
use dfk::plant::LpvDataset;

const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "dfk", version, about = "Data-driven LPV state-feedback design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output file; companion files are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Move every random stream of the config to this trial.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant under the configured excitation and write the dataset CSV (+ `.meta`).
    Acquire {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the priors, solve the design program and write the controller (+ `.report`).
    Design {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `acquire`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the closed loop with a designed controller and write the run CSV (+ `.metrics`).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller written by `design`.
        #[arg(long)]
        controller: PathBuf,
    },
    /// Repeat acquire, design and simulate over seeded trials and write the summary (+ `.trials.csv`).
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Number of trials; defaults to the config's count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Open-loop input fit of a controller on a dataset and on the config's validation signal.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dfk::Error>() {
            return match e {
                dfk::Error::Invalid(_) | dfk::Error::Dimension { .. } | dfk::Error::Parse { .. } => EXIT_INVALID,
                dfk::Error::Infeasible { .. } => EXIT_INFEASIBLE,
                dfk::Error::Divergence { .. } => EXIT_DIVERGED,
                dfk::Error::Io { .. } => EXIT_IO,
                _ => EXIT_OTHER,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let cfg = PipelineConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(s) => cfg.for_trial(s),
        None => cfg,
    })
}

/// `base` with `suffix` appended to its file name.
fn companion(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    base.with_file_name(name)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Acquire { common } => {
            let cfg = load(&common)?;
            let acq = pipeline::acquire(&cfg)?;
            acq.dataset.write(&common.out)?;
            println!("wrote {} samples to {}", acq.dataset.len(), common.out.display());
        }
        Command::Design { common, data } => {
            let cfg = load(&common)?;
            let dataset = LpvDataset::read(&data)?;
            let design = pipeline::design(&cfg, &dataset)?;
            write_controllers(&common.out, &design.controllers)?;
            let mut report = design.report_kv(&cfg);
            report.push("dataset", data.display());
            write(&companion(&common.out, ".report"), &report.to_string())?;
            for (j, r) in design.reports.iter().enumerate() {
                println!(
                    "u{}: N = {}, selected = {}, delta = {:.4e}, fit rms = {:.4e}",
                    j + 1,
                    r.n_coeffs,
                    r.n_sel,
                    r.delta,
                    r.fit_rms
                );
            }
        }
        Command::Simulate { common, controller } => {
            let cfg = load(&common)?;
            let controllers = read_controllers(&controller)?;
            let run = pipeline::simulate(&cfg, &controllers)?;
            run.write_csv(&common.out)?;
            let mut kv = KvBlock::new();
            kv.push("steps", run.steps()).push("controller", controller.display());
            for (j, v) in run.rms.iter().enumerate() {
                kv.push(format!("rms_{}", j + 1), v);
            }
            kv.extend_prefixed("config.", &cfg.provenance());
            write(&companion(&common.out, ".metrics"), &kv.to_string())?;
            let shown: Vec<String> = run.rms.iter().map(|v| format!("{v:.4e}")).collect();
            println!("rms per channel: {}", shown.join(", "));
        }
        Command::Montecarlo { common, trials } => {
            let cfg = PipelineConfig::load(&common.config)?;
            let mc = &cfg.montecarlo;
            let summary = pipeline::run_monte_carlo(
                &cfg,
                trials.unwrap_or(mc.trials),
                common.seed.unwrap_or(mc.seed),
                mc.threads,
            )?;
            let mut kv = summary.to_kv();
            kv.extend_prefixed("config.", &cfg.provenance());
            write(&common.out, &kv.to_string())?;
            write(&companion(&common.out, ".trials.csv"), &summary.trials_csv()?)?;
            let shown: Vec<String> = summary.mean_rms.iter().map(|v| format!("{v:.4e}")).collect();
            println!(
                "{} trials, {} failed; mean rms {}; mean selected {:.1}",
                summary.trials.len(),
                summary.failures,
                shown.join(", "),
                summary.mean_n_sel
            );
        }
        Command::Report { common, controller, data } => {
            let cfg = load(&common)?;
            let controllers = read_controllers(&controller)?;
            let dataset = LpvDataset::read(&data)?;
            let mut kv = KvBlock::new();
            kv.push("controller", controller.display()).push("dataset", data.display());
            for (j, k) in controllers.iter().enumerate() {
                kv.push(format!("n_sel.u{}", j + 1), sparsity_count(k, cfg.design.sparsity_threshold));
            }
            for (j, v) in pipeline::input_fit_rms(&controllers, &dataset)?.iter().enumerate() {
                kv.push(format!("fit_rms.design.u{}", j + 1), v);
            }
            if let Some(val) = pipeline::acquire_validation(&cfg)? {
                for (j, v) in pipeline::input_fit_rms(&controllers, &val.dataset)?.iter().enumerate() {
                    kv.push(format!("fit_rms.validation.u{}", j + 1), v);
                }
            }
            write(&common.out, &kv.to_string())?;
            print!("{kv}");
        }
    }
    Ok(())
}
