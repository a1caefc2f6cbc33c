//! `eclab`: experiment runner for the echo canceler control toolkit.
//!
//! Exit codes: 0 success, 1 input/output failure, 2 configuration error,
//! 3 numerical failure.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Diagnostic, ExperimentConfig, Kind};
use run::{RunError, RunOptions};

#[derive(Parser)]
#[command(
    name = "eclab",
    version,
    about = "Four-hypothesis echo canceler control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact confusion matrices over a c_x² × p grid.
    TheoryCurves(RunArgs),
    /// Monte Carlo confusion matrices, optionally next to theory.
    McCurves(RunArgs),
    /// Runs the controlled canceler over synthetic or recorded signals.
    Simulate(RunArgs),
    /// Classifies (t0, t1) pairs read from CSV.
    Classify(RunArgs),
    /// Lists every problem in a config without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, env = "ECLAB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<(ExperimentConfig, String), RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    let mut cfg = config::parse(&text).map_err(RunError::Config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok((cfg, text))
}

fn execute(kind: Kind, args: RunArgs) -> Result<(), RunError> {
    let (cfg, text) = load(&args.config, args.seed)?;
    if cfg.kind != kind {
        return Err(RunError::Config(vec![Diagnostic {
            field: "kind".into(),
            line: config::locate(&text, "kind"),
            message: format!(
                "config is for `{}`, not `{}`",
                cfg.kind.subcommand(),
                kind.subcommand()
            ),
        }]));
    }
    if args.jobs == Some(0) {
        return Err(RunError::Config(vec![Diagnostic {
            field: "jobs".into(),
            line: None,
            message: "must be at least 1".into(),
        }]));
    }
    let out_dir = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let opts = RunOptions {
        out_dir,
        jobs: args.jobs,
        base_dir: args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
        config_name: args
            .config
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let report = run::run(&cfg, Some(&text), &opts)?;
    for line in &report.summary {
        println!("{line}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), RunError> {
    let (cfg, text) = load(&args.config, args.seed)?;
    let diagnostics = cfg.validate(Some(&text));
    if diagnostics.is_empty() {
        println!("{}: ok", args.config.display());
        Ok(())
    } else {
        Err(RunError::Config(diagnostics))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TheoryCurves(a) => execute(Kind::TheoryCurves, a),
        Command::McCurves(a) => execute(Kind::McCurves, a),
        Command::Simulate(a) => execute(Kind::Simulate, a),
        Command::Classify(a) => execute(Kind::ClassifyStream, a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                RunError::Config(diags) => {
                    eprintln!("error: invalid configuration");
                    for d in diags {
                        eprintln!("  {d}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
