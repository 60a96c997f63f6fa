use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iom_trading::harness::{run, Command, ExperimentSpec};

#[derive(Parser)]
#[command(
    name = "iomtrade",
    version,
    about = "Immersion-aware model trading experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Dotted config key, e.g. `mddr.episodes=200`. Repeatable.
    #[arg(long = "override", global = true, value_name = "K=V", num_args = 1..)]
    overrides: Vec<String>,
    /// Worker threads for independent instances.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the pricing equilibrium of one instance.
    SolveNe,
    /// Train the distributed PPO reward agents.
    TrainMddr,
    /// Compare the equilibrium with the four benchmark schemes.
    Benchmark,
    /// Trading phase followed by the federated-learning phase.
    Simulate,
    /// Run every acceptance check and invariant.
    VerifyAll,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::SolveNe => Command::SolveNe,
        Cmd::TrainMddr => Command::TrainMddr,
        Cmd::Benchmark => Command::Benchmark,
        Cmd::Simulate => Command::Simulate,
        Cmd::VerifyAll => Command::VerifyAll,
    };
    let spec = ExperimentSpec {
        config_path: cli.config,
        command,
        seed: cli.seed,
        output_dir: cli.out,
        overrides: cli.overrides,
        jobs: cli.jobs,
    };
    match run(&spec) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            if report.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
