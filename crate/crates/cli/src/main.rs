use std::path::PathBuf;
use std::process::ExitCode;

use amkl::toys::ToyIterator;
use amkl_cli::commands::{EXIT_OK, EXIT_USAGE};
use amkl_cli::{cmd_diagnose, cmd_report, cmd_toy, train, DiagnoseArgs, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

/// Alternating-minimization network training with KL convergence diagnostics.
///
/// Exit codes: 0 ok, 1 usage or input error, 2 solver divergence,
/// 3 sufficient-decrease condition not established.
#[derive(Parser)]
#[command(name = "amkl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver; writes trace.jsonl, state.txt and manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trace and write a diagnosis document.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        /// Step count of the decrease condition [default: the solver's nominal j, else 1].
        #[arg(long)]
        j: Option<usize>,
        /// Limit value f*; defaults to the trace header's, else the trace minimum.
        #[arg(long, allow_negative_numbers = true)]
        fstar: Option<f64>,
        /// KL exponent for the rate envelope check.
        #[arg(long)]
        theta: Option<f64>,
        /// Exponent of the relaxed decrease condition.
        #[arg(long)]
        alpha: Option<f64>,
        /// Diagnosis path [default: diagnosis.json beside the trace].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the trace of an iterator on f(x) = |x|^p.
    Toy {
        #[arg(long)]
        p: f64,
        #[arg(long, value_enum, default_value = "gradient-descent")]
        iterator: IteratorArg,
        /// Step size.
        #[arg(long)]
        t: f64,
        /// Growth factor bump of the two-phase iterator.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long)]
        steps: usize,
        /// Trace file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize run directories as CSV plus a text table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// CSV file; without it the CSV goes to stdout and the table to stderr.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IteratorArg {
    GradientDescent,
    ProximalPoint,
    TwoPhase,
}

fn execute(command: Command) -> amkl::Result<u8> {
    match command {
        Command::Train { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.out.clone())
                .ok_or_else(|| amkl::Error::Config {
                    field: "out".into(),
                    message: "no output directory: pass --out or set `out`".into(),
                })?;
            train(&cfg, &out)
        }
        Command::Diagnose {
            trace,
            j,
            fstar,
            theta,
            alpha,
            out,
        } => cmd_diagnose(&DiagnoseArgs {
            trace,
            j,
            fstar,
            theta,
            alpha,
            out,
        }),
        Command::Toy {
            p,
            iterator,
            t,
            delta,
            x0,
            steps,
            out,
        } => {
            let it = match iterator {
                IteratorArg::GradientDescent => ToyIterator::GradientDescent { t },
                IteratorArg::ProximalPoint => ToyIterator::ProximalPoint { t },
                IteratorArg::TwoPhase => ToyIterator::TwoPhase { t, delta },
            };
            cmd_toy(p, it, x0, steps, &out)
        }
        Command::Report { dirs, out } => cmd_report(&dirs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
