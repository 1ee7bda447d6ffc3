use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use bergman_cli::{execute, parse_config, write_outputs};
use clap::{Parser, Subcommand};

const THREADS_VAR: &str = "BERGMAN_THREADS";

/// Exit statuses: 0 every invariant held, 1 an invariant failed or the run
/// aborted, 2 the config could not be read or parsed.
#[derive(Parser)]
#[command(name = "bergman", version, about = "Weighted Bergman kernel experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of compact sample grid points, overriding `numeric.grid_count`.
        #[arg(long)]
        seed_grid: Option<usize>,
        /// Print nothing on success.
        #[arg(long)]
        quiet: bool,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var(THREADS_VAR) {
        let n: usize = value.parse().with_context(|| format!("{THREADS_VAR}={value} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let Command::Run { config, out, seed_grid, quiet } = Cli::parse().command;
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = out {
        cfg.output.directory = dir;
    }
    if let Some(n) = seed_grid {
        if n == 0 {
            eprintln!("error: --seed-grid must be positive");
            return ExitCode::from(2);
        }
        cfg.numeric.grid_count = n;
    }

    let mut run = execute(&cfg);
    if let Err(e) = write_outputs(&cfg.output.directory, &cfg.output.formats, &mut run.manifest, &run.tables) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let m = &run.manifest;
    if !quiet || !m.passed {
        for c in &m.checks {
            println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        if let Some(e) = &m.error {
            println!("[FAIL] run aborted: {e}");
        }
        println!("{} -> {}", m.experiment, cfg.output.directory.display());
    }
    if m.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
