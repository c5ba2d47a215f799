use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use zakharov_cli::config::{parse_onto, split_assignment, ConfigError, RunConfig};
use zakharov_cli::run::{read_config_file, CliError};
use zakharov_cli::{emit_config, run};

/// Simulation and bifurcation analysis of the forced, damped Zakharov system.
#[derive(Parser, Debug)]
#[command(name = "zakharov", version)]
struct Cli {
    /// simulate, stationary, spectrum, continue-eq, find-orbit,
    /// continue-orbit, verify or diagram
    command: Option<String>,
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print every key with its default and exit
    #[arg(long)]
    print_defaults: bool,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut text = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => String::new(),
    };
    let mut errs = Vec::new();
    for s in &cli.set {
        if split_assignment(s).is_none() {
            errs.push(ConfigError {
                line: None,
                key: s.clone(),
                message: "--set expects key=value".into(),
            });
        }
        text.push('\n');
        text.push_str(s);
    }
    if let Some(out) = &cli.out {
        text.push_str(&format!("\nout={out}"));
    }
    if let Some(seed) = cli.seed {
        text.push_str(&format!("\nseed={seed}"));
    }
    if let Some(c) = &cli.command {
        text.push_str(&format!("\ncommand={c}"));
    }
    let cfg = match parse_onto(RunConfig::default(), &text) {
        Ok(c) => Some(c),
        Err(e) => {
            errs.extend(e);
            None
        }
    };
    match cfg {
        Some(c) if errs.is_empty() => Ok(c),
        _ => Err(CliError::Config(errs)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        print!("{}", emit_config(&RunConfig::default()));
        return ExitCode::SUCCESS;
    }
    let result = load(&cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
