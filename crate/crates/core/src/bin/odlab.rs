use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use odlab::data::NoiseKind;
use odlab::harness::{self, CorruptArgs, SweepParam};

#[derive(Parser)]
#[command(name = "odlab", version, about = "Output-decay training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    C,
    Beta,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Symmetric,
    Pair,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train { config: PathBuf },
    /// Train once per value of the decay level or coefficient.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Corrupt an IDX label file.
    Corrupt {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of classes; defaults to one past the largest label.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Aggregate run logs and optionally fit a line between two columns.
    Analyze {
        #[arg(required = true)]
        runlogs: Vec<PathBuf>,
        /// Column pair `x:y`.
        #[arg(long)]
        regress: Option<String>,
        /// Output JSON path; defaults to analysis.json next to the first log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> odlab::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let outcome = harness::cmd_train(&config)?;
            let last = outcome.records.last().expect("at least one epoch");
            println!(
                "trained {} epochs into {}: test accuracy {:.4}, ECE {:.4}, mean |logit| {:.4}",
                outcome.records.len(),
                outcome.output_dir.display(),
                last.test_accuracy,
                last.test_ece,
                last.test_mean_abs
            );
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let param = match param {
                Param::C => SweepParam::C,
                Param::Beta => SweepParam::Beta,
            };
            let rows = harness::cmd_sweep(&config, param, &values)?;
            println!("{:>10} {:>4} {:>10} {:>10} {:>10}", param.name(), "ok", "best_err", "ece", "mean_abs");
            for r in &rows {
                println!(
                    "{:>10} {:>4} {:>10.3} {:>10.4} {:>10.4}",
                    r.value, r.ok, r.test_error, r.final_ece, r.final_mean_abs
                );
            }
            if rows.iter().any(|r| r.ok == 0) {
                return Err(odlab::Error::Invalid("some sweep runs failed".into()));
            }
        }
        Command::Corrupt {
            kind,
            rate,
            seed,
            input,
            out,
            classes,
        } => {
            let kind = match kind {
                Kind::Symmetric => NoiseKind::Symmetric,
                Kind::Pair => NoiseKind::Pair,
            };
            let report = harness::cmd_corrupt(&CorruptArgs {
                kind,
                rate,
                seed,
                input,
                out_dir: out,
                n_classes: classes,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Analyze {
            runlogs,
            regress,
            out,
        } => {
            let pair = match &regress {
                Some(spec) => Some(spec.split_once(':').ok_or_else(|| {
                    odlab::Error::Invalid(format!("--regress expects x:y, got {spec:?}"))
                })?),
                None => None,
            };
            let out = out.unwrap_or_else(|| {
                runlogs[0]
                    .parent()
                    .map(|p| p.join("analysis.json"))
                    .unwrap_or_else(|| PathBuf::from("analysis.json"))
            });
            let report = harness::cmd_analyze(&runlogs, pair, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
