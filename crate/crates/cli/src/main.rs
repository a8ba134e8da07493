mod config;
mod output;
mod tasks;

use std::process::ExitCode;

use clap::Parser;

use crate::config::Command;
use crate::tasks::TaskError;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dbarlab", version, about = "Numerical laboratory for the weighted d-bar Neumann problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DBARLAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("DBARLAB_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("DBARLAB_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let cfg = match cli.command.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let weight = match cfg.validate() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let artifacts = match tasks::run(&cfg, &weight) {
        Ok(a) => a,
        Err(TaskError::Config(m)) => {
            eprintln!("error: {m}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(TaskError::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    if let Err(e) = output::write_all(&cfg.out, &artifacts) {
        eprintln!("error: writing outputs to {}: {e:#}", cfg.out.display());
        return ExitCode::from(EXIT_NUMERICAL);
    }
    print!("{}", artifacts.summary);
    if cfg.strict && artifacts.inconclusive {
        eprintln!("inconclusive verdict with --strict");
        return ExitCode::from(EXIT_INCONCLUSIVE);
    }
    ExitCode::SUCCESS
}
