use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rmfg_cli::{run, RunConfig};

/// Penalized and reflected mean field game studies.
#[derive(Debug, Parser)]
#[command(name = "rmfg", version)]
struct Cli {
    /// simulate, cost, dp, equilibrium, sweep-n, chatter or diagnose
    command: String,
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, applied after the file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::from(1);
            }
        },
        None => String::new(),
    };
    let mut overrides = cli.overrides.clone();
    overrides.push(format!("run.command={}", cli.command));
    if let Some(s) = cli.seed {
        overrides.push(format!("run.seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("run.out={}", o.display()));
    }
    let cfg = match RunConfig::parse_with_defaults(&text, &overrides) {
        Ok((cfg, defaults)) => {
            for d in defaults {
                log::info!("default {d}");
            }
            cfg
        }
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(status) => {
            log::info!("wrote artifacts to {}", cfg.out.display());
            ExitCode::from(status.code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
