use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iscap_cli::spec::parse_method_list;
use iscap_cli::{run, MethodKind, RunOptions};

#[derive(Parser)]
#[command(name = "iscap", version, about = "Joint sensing, communication and powering beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every sweep point, seed and method of an experiment file.
    Run {
        spec: PathBuf,
        /// Output directory; overrides `outputs` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: available parallelism).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        workers: Option<u64>,
        /// Comma-separated subset of sca, fp, zf, round_robin, time_switching.
        #[arg(long, value_parser = parse_methods)]
        methods: Option<Methods>,
        /// Also run target estimation on every design.
        #[arg(long)]
        sense: bool,
    },
}

#[derive(Clone)]
struct Methods(Vec<MethodKind>);

fn parse_methods(s: &str) -> Result<Methods, String> {
    parse_method_list(s).map(Methods)
}

fn main() -> ExitCode {
    let Command::Run {
        spec,
        out,
        workers,
        methods,
        sense,
    } = Cli::parse().command;
    let opts = RunOptions {
        out,
        workers: workers.map(|w| w as usize),
        methods: methods.map(|m| m.0),
        sense,
    };
    match run(&spec, &opts) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            let failed = summary.numerical_failures();
            if failed > 0 {
                eprintln!("{failed} solve(s) ended in a numerical failure; see failures.csv");
            }
            eprintln!("results written to {}", summary.out_dir.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
