use std::path::PathBuf;

use clap::{Parser, Subcommand};
use glinbandit_cli::app;

#[derive(Parser)]
#[command(name = "glinbandit", version, about = "Generalized linear contextual bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Plot mean cumulative regret from a summary.csv.
    Plot {
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the kappa oracles for each configured seed.
    Kappa {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the built-in property suites.
    Selftest,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs } => app::cmd_run(&config, out.as_deref(), jobs),
        Command::Plot { summary, out } => app::cmd_plot(&summary, &out),
        Command::Kappa { config, jobs } => app::cmd_kappa(&config, jobs),
        Command::Selftest => app::cmd_selftest(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
