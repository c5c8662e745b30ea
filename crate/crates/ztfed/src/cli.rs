//! Command-line entry points.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ztfed_core::data::{mask_dataset, synth_wind};
use ztfed_core::rng::derive_u64;

use crate::csvio::{write_csv, write_masks};
use crate::error::{AppError, AppResult};
use crate::experiment::{self, load_datasets, run_on, CHECKPOINT_FILE, METRICS_FILE, ROUNDS_FILE};
use crate::report::{render, report_dir};
use crate::spec::{parse_aggregator, ExperimentSpec};
use crate::sweep::{run_sweep, RESULTS_FILE};

#[derive(Debug, Parser)]
#[command(name = "ztfed", version, about = "Zero-trust federated wind power imputation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic per-farm CSV files.
    GenData(Common),
    /// Run one federated experiment.
    Run(RunArgs),
    /// Run every cell of the configured sweep grid.
    Sweep(SweepArgs),
    /// Summarize a sweep's results table.
    Report(ReportArgs),
}

/// Options shared by every data-producing command.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Toggles {
    /// Aggregation rule: dtaa, fedavg, tmean, multikrum or median.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// Disable differential-privacy noise.
    #[arg(long)]
    pub no_dp: bool,
    /// Disable zero-knowledge proofs.
    #[arg(long)]
    pub no_nizk: bool,
    /// Disable encryption and MAC checks.
    #[arg(long)]
    pub no_civ: bool,
    /// Send dense 32-bit parameters.
    #[arg(long)]
    pub no_compress: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub toggles: Toggles,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub toggles: Toggles,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
}

/// The spec after applying the config file and flag overrides.
pub fn resolve(common: &Common, toggles: Option<&Toggles>) -> AppResult<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(o) = &common.out {
        spec.out = o.clone();
    }
    if let Some(t) = toggles {
        if let Some(a) = &t.aggregator {
            spec.fl.aggregator = parse_aggregator(a)?;
        }
        spec.fl.dp_enabled &= !t.no_dp;
        spec.fl.nizk_enabled &= !t.no_nizk;
        spec.fl.civ_enabled &= !t.no_civ;
        spec.fl.compression_enabled &= !t.no_compress;
    }
    Ok(spec)
}

fn create_dir(dir: &Path) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(AppError::path(dir))
}

pub fn cmd_gen_data(common: &Common) -> AppResult<String> {
    let spec = resolve(common, None)?;
    spec.validate()?;
    let sets = synth_wind(&spec.data.synth, spec.seed)?;
    create_dir(&spec.out)?;
    for ds in &sets {
        write_csv(&spec.out.join(format!("farm_{:02}.csv", ds.farm_id)), ds)?;
    }
    let rows: usize = sets.iter().map(|d| d.len() * d.sequence_length).sum();
    Ok(format!(
        "wrote {} farm files to {} ({} windows of {} steps each per farm, {rows} rows total, seed {})",
        sets.len(),
        spec.out.display(),
        spec.data.synth.samples_per_farm,
        spec.data.synth.sequence_length,
        spec.seed
    ))
}

pub fn cmd_run(args: &RunArgs) -> AppResult<String> {
    let spec = resolve(&args.common, Some(&args.toggles))?;
    spec.validate()?;
    let datasets = load_datasets(&spec)?;
    create_dir(&spec.out)?;
    let outcome = run_on(&spec, &datasets)?;
    experiment::write_outputs(&spec.out, &outcome)?;
    let mask_dir = spec.out.join("masks");
    create_dir(&mask_dir)?;
    for i in 0..spec.fl.clients {
        let ds = &datasets[i % datasets.len()];
        let windows = mask_dataset(ds, &spec.mask, derive_u64(spec.seed, "client-mask", i as u64))?;
        let path = mask_dir.join(format!("client_{i:02}.jsonl"));
        let file = fs::File::create(&path).map_err(AppError::path(&path))?;
        let masks: Vec<_> = windows.iter().map(|w| &w.mask).collect();
        write_masks(BufWriter::new(file), &masks).map_err(AppError::path(&path))?;
    }
    let m = &outcome.metrics;
    Ok(format!(
        "{} rounds, aggregator {}: test RMSE {:.4} (mean baseline {:.4}), MAE {:.4}, MAAPE {:.4}, MIA-SR {:.2}%, CO {:.4} MB\n\
         wrote {}, {}, {} and masks/ to {}\nfinal digest {}",
        m.rounds,
        m.aggregator,
        m.test.rmse,
        m.baseline.rmse,
        m.test.mae,
        m.test.maape,
        m.mia.success_rate,
        m.communication_mb,
        METRICS_FILE,
        ROUNDS_FILE,
        CHECKPOINT_FILE,
        spec.out.display(),
        m.final_digest
    ))
}

pub fn cmd_sweep(args: &SweepArgs) -> AppResult<String> {
    let spec = resolve(&args.common, Some(&args.toggles))?;
    let s = run_sweep(&spec, args.jobs)?;
    Ok(format!(
        "{} cells ({} run, {} reused); table at {}",
        s.rows.len(),
        s.ran,
        s.reused,
        spec.out.join(RESULTS_FILE).display()
    ))
}

pub fn cmd_report(args: &ReportArgs) -> AppResult<String> {
    let spec = resolve(&args.common, None)?;
    let rep = report_dir(&spec.out)?;
    let text = render(&rep);
    let path = spec.out.join("report.txt");
    fs::write(&path, &text).map_err(AppError::path(&path))?;
    Ok(text)
}

pub fn dispatch(cli: &Cli) -> AppResult<String> {
    match &cli.command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(msg) => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
