//! Command implementations behind the `bitemp` binary.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use bitemp_core::checks::{run_suite, CheckOptions, Suite};
use bitemp_core::loss::tsallis_loss_output;
use bitemp_core::report::write_experiment;
use bitemp_core::{
    bitempered_loss, run_comparison, Error, ExperimentConfig, LossConfig, ProbabilityVector,
    TemperaturePair,
};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bitemp", version, about = "Bi-tempered logistic loss toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the loss, probabilities and gradient for one example.
    Eval(EvalArgs),
    /// Run a loss comparison experiment and write its reports.
    Experiment {
        /// Flat `key = value` configuration file.
        config: PathBuf,
        /// Directory for report.csv, history, grid and config.resolved files.
        out_dir: PathBuf,
    },
    /// Run a seeded invariant suite.
    Check {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub t1: f64,
    #[arg(long)]
    pub t2: f64,
    /// Comma-separated activations.
    #[arg(long, required = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub a: Vec<f64>,
    /// Comma-separated label distribution.
    #[arg(long, required = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Evaluate the Tsallis baseline `-log_t1 p_c` instead (one-hot labels).
    #[arg(long)]
    pub tsallis: bool,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Eval(args) => cmd_eval(&args, out),
        Command::Experiment { config, out_dir } => cmd_experiment(&config, &out_dir, out),
        Command::Check { suite, seed } => {
            let suite: Suite = suite.parse().expect("validated by clap");
            return cmd_check(suite, &CheckOptions { seed, ..CheckOptions::default() }, out, err);
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Prints `value`, `probabilities` and `gradient` lines.
pub fn cmd_eval(args: &EvalArgs, out: &mut impl Write) -> bitemp_core::Result<()> {
    let temps = TemperaturePair::new(args.t1, args.t2)?;
    let y = ProbabilityVector::new(args.y.clone())?;
    let output = if args.tsallis {
        tsallis_loss_output(&args.a, &y, temps)?
    } else {
        let cfg = LossConfig::from_temps(temps).with_label_smoothing(args.smoothing)?;
        bitempered_loss(&args.a, &y, &cfg)?
    };
    writeln!(out, "value {}", output.value)?;
    writeln!(out, "probabilities {}", join(&output.probabilities))?;
    writeln!(out, "gradient {}", join(&output.gradient))?;
    Ok(())
}

/// Runs the configured comparison and writes its files into `out_dir`.
pub fn cmd_experiment(config: &Path, out_dir: &Path, out: &mut impl Write) -> bitemp_core::Result<()> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", config.display())))?;
    let cfg = ExperimentConfig::from_text(&text)?;
    // fail on an unusable output directory before spending time on training
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let report = run_comparison(&cfg)?;
    write_experiment(out_dir, &cfg, &report)
        .map_err(|e| match e {
            Error::Io(msg) => Error::Io(format!("writing to {}: {msg}", out_dir.display())),
            other => other,
        })?;

    writeln!(out, "arm        mean_test  min_test  failed")?;
    for (arm, temps) in cfg.temps.iter().enumerate() {
        let accs = report.test_accuracies(arm);
        let ok: Vec<f64> = accs.iter().copied().filter(|a| !a.is_nan()).collect();
        let mean = ok.iter().sum::<f64>() / ok.len().max(1) as f64;
        let min = ok.iter().copied().fold(f64::NAN, f64::min);
        writeln!(
            out,
            "{:<10} {:<10.4} {:<9.4} {}",
            bitemp_core::experiments::arm_id(temps),
            mean,
            min,
            accs.len() - ok.len()
        )?;
    }
    writeln!(out, "wrote {} ({:.1?})", out_dir.display(), report.runtime)?;
    Ok(())
}

/// Prints one line per check and returns the exit code.
pub fn cmd_check(suite: Suite, opts: &CheckOptions, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let results = match run_suite(suite, opts) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    for r in &results {
        let _ = writeln!(out, "{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(out, "{} checks, {} failed", results.len(), failed);
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
