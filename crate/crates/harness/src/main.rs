use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dum_harness::experiment::{summarize_sweep, write_sweep_csv};
use dum_harness::report::emit_charts;
use dum_harness::{
    load_config, read_report_csv, run_experiment, write_run, ExperimentConfig, HarnessError, HarnessResult, RunLock,
    RunOptions, RunOutput, Stages,
};

/// Train deterministic uncertainty methods and baselines, evaluate them
/// under distribution shift and OOD data, and write reports.
#[derive(Parser)]
#[command(name = "dum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (strength, seed) job and save checkpoints; reports clean test metrics.
    Train(RunArgs),
    /// Evaluate over the configured shift schedule (training jobs without checkpoints).
    EvalShift(RunArgs),
    /// Evaluate OOD detection against the configured OOD dataset.
    EvalOod(RunArgs),
    /// Correlate regularization strength with pooled rAULC.
    Sweep(RunArgs),
    /// Regenerate charts from an existing report.csv.
    Report {
        /// Run directory containing report.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or the name of a shipped preset.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl RunArgs {
    fn resolve(&self) -> HarnessResult<ExperimentConfig> {
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(args: &RunArgs, stages: Stages, sweep: bool) -> HarnessResult<RunOutput> {
    let config = args.resolve()?;
    if sweep && config.strengths.len() < 3 {
        return Err(HarnessError::Config("a sensitivity sweep needs at least 3 strengths".into()));
    }
    let dir = config.output_dir.clone();
    let _lock = RunLock::acquire(&dir)?;
    let options = RunOptions { jobs: args.jobs, stages, checkpoints: Some(dir.join("checkpoints")) };
    let out = run_experiment(&config, &options)?;
    write_run(&dir, &out)?;
    if sweep {
        let summary = summarize_sweep(config.method, &config.strengths, &out.jobs)?;
        write_sweep_csv(&dir.join("sweep.csv"), &summary)?;
        println!("pearson {:?} spearman {:?}", summary.pearson, summary.spearman);
    }
    for row in out.rows.iter().filter(|r| r.seed == "mean" || out.jobs.len() == 1) {
        println!(
            "{} strength {} seed {} severity {}: acc {:?} rAULC {:?} AUROC {:?}",
            row.method, row.strength, row.seed, row.severity, row.accuracy, row.raulc, row.auroc
        );
    }
    println!("wrote {}", dir.display());
    Ok(out)
}

fn report(dir: &Path) -> HarnessResult<()> {
    let rows = read_report_csv(fs::File::open(dir.join("report.csv"))?)?;
    let _lock = RunLock::acquire(dir)?;
    emit_charts(dir, &rows)?;
    println!("{} rows, charts in {}", rows.len(), dir.join("charts").display());
    Ok(())
}

/// 0 when every job succeeded, 3 when the only failures were divergences.
fn exit_code(out: &RunOutput) -> ExitCode {
    let failed: Vec<_> = out.failures().collect();
    for f in &failed {
        eprintln!("seed {} strength {}: {}", f.seed, f.strength, f.failure.as_deref().unwrap_or(""));
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else if failed.iter().all(|f| f.diverged) {
        ExitCode::from(3)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run(a, Stages::CLEAN, false).map(|o| exit_code(&o)),
        Command::EvalShift(a) => run(a, Stages { shift: true, ood: false }, false).map(|o| exit_code(&o)),
        Command::EvalOod(a) => run(a, Stages { shift: false, ood: true }, false).map(|o| exit_code(&o)),
        Command::Sweep(a) => run(a, Stages { shift: true, ood: false }, true).map(|o| exit_code(&o)),
        Command::Report { out } => report(out).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(if matches!(e, HarnessError::Config(_)) { 2 } else { 1 })
    })
}
