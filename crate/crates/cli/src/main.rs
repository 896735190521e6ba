use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use codsa_tool::{execute, Command, Options, OUT_ENV};
use codsa_core::tuner::SweepParam;

#[derive(Parser)]
#[command(name = "codsa", version, about = "Conditional data synthesis augmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset and carve balanced validation/test sets.
    Simulate(Common),
    /// Pretrain the transfer autoencoder on source data.
    Pretrain(Common),
    /// Run and tune the configured methods over all seeds.
    Run(Common),
    /// Marginal sweeps: one hyperparameter fixed, the others tuned.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// m_over_n, alpha1 or r; all three when omitted.
        #[arg(long)]
        param: Option<String>,
    },
    /// Domain and generation indices for one lambda.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "codsa-out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores); never changes results.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config's seed (or seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config and print the plan without training.
    #[arg(long)]
    dry_run: bool,
}

fn options(c: Common, param: Option<SweepParam>) -> Options {
    Options { config: c.config, out: c.out, workers: c.workers, seed: c.seed, dry_run: c.dry_run, param }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, options(c, None)),
        Cmd::Pretrain(c) => (Command::Pretrain, options(c, None)),
        Cmd::Run(c) => (Command::Run, options(c, None)),
        Cmd::Diagnose(c) => (Command::Diagnose, options(c, None)),
        Cmd::Sweep { common, param } => {
            let param = match param.as_deref().map(SweepParam::parse).transpose() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            (Command::Sweep, options(common, param))
        }
    };
    match execute(command, &opts) {
        Ok(report) => {
            if opts.dry_run {
                println!("{}", report.plan);
            } else {
                for f in &report.files {
                    println!("{}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
