use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use psgd_cli::{parse_config, run_experiment, ExperimentKind};

#[derive(Parser)]
#[command(name = "psgd", version, about = "Run projected SGD experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-square error curve and power-law fit.
    Mse(Common),
    /// Regret curve and logarithmic fit.
    Regret(Common),
    /// Perturbed Lyapunov function diagnostics.
    Lyapunov(Common),
    /// Exit probabilities and exit times at several scales.
    Escape(Common),
    /// Rate functional: Legendre transform and path actions.
    Rate(Common),
    /// Monte-Carlo MSE against the exact scalar recursion.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Mse(a) => (ExperimentKind::Mse, a),
        Command::Regret(a) => (ExperimentKind::Regret, a),
        Command::Lyapunov(a) => (ExperimentKind::Lyapunov, a),
        Command::Escape(a) => (ExperimentKind::Escape, a),
        Command::Rate(a) => (ExperimentKind::Rate, a),
        Command::OracleCheck(a) => (ExperimentKind::OracleCheck, a),
    };
    let result = parse_config(&args.config, kind, args.seed, args.workers).and_then(|c| run_experiment(&c, &args.out));
    match result {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            if report.checks_failed > 0 {
                eprintln!("{} check(s) failed; see summary.json", report.checks_failed);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("psgd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
