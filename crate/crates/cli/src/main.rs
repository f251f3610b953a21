use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use afs_core::experiment::{run_experiment, ExperimentConfig, Method};
use afs_core::report::{emit_report, metric_rows, read_records, summary_rows, Format, RunResult};

#[derive(Parser)]
#[command(name = "afs", version, about = "Online class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured method over seeded runs.
    Run {
        /// Flat `key = value` experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Base seed; run r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory, overriding the config file.
        #[arg(long, env = "AFS_OUTPUT_DIR")]
        out: Option<PathBuf>,
        /// afs, er or ablation:<flags>.
        #[arg(long)]
        method: Option<String>,
    },
    /// Rewrite the report tables of a finished experiment.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Print the default config.
    Defaults,
}

fn print_summary(results: &[RunResult]) -> Result<()> {
    let summary = summary_rows(&metric_rows(results)?)?;
    let last = summary.iter().map(|r| r.task).max().unwrap_or(0);
    println!("{:<24} {:>7} {:>5} {:>16} {:>8} {:>8}", "method", "memory", "runs", "A_T (%)", "F_T", "I_T");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.4}", x));
    for row in summary.iter().filter(|r| r.task == last) {
        println!(
            "{:<24} {:>7} {:>5} {:>16} {:>8} {:>8}",
            row.method,
            row.memory,
            row.runs,
            row.a_pct,
            fmt(row.f_mean),
            fmt(row.i_mean)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            runs,
            out,
            method,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg)?;
            print_summary(&outcome.results)?;
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Report { input, format } => {
            let format: Format = format.parse()?;
            let results = read_records(&input)?;
            for f in emit_report(&results, &input, format)? {
                eprintln!("wrote {}", f.display());
            }
            print_summary(&results)?;
        }
        Command::Defaults => print!("{}", ExperimentConfig::default().to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
