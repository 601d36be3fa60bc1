use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use reltask::harness::{run_cli, Command, EXIT_FATAL};

/// Relational template tasks: data generation, training, kernel studies
/// and probes.
#[derive(Parser, Debug)]
#[command(name = "reltask", version)]
struct Cli {
    /// gen, train, kernel, nmatrix, probe, sweep, figures or selftest
    command: String,
    /// JSON config; the command's built-in default when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// `--key value` overrides applied on top of the config.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

/// Lifts `--config` and `--jobs` out of the trailing overrides, where clap
/// leaves them when they follow the command.
fn lift_globals(cli: &mut Cli) -> Result<(), String> {
    let mut rest = Vec::new();
    let mut it = std::mem::take(&mut cli.overrides).into_iter();
    while let Some(a) = it.next() {
        let (key, inline) = match a.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (a.clone(), None),
        };
        if key != "--config" && key != "--jobs" {
            rest.push(a);
            continue;
        }
        let val = inline.or_else(|| it.next()).ok_or(format!("{key} needs a value"))?;
        if key == "--config" {
            cli.config = Some(PathBuf::from(val));
        } else {
            cli.jobs = val.parse().map_err(|_| format!("--jobs expects a positive integer, got {val:?}"))?;
        }
    }
    cli.overrides = rest;
    Ok(())
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Err(e) = lift_globals(&mut cli) {
        eprintln!("reltask: {e}");
        return ExitCode::from(EXIT_FATAL as u8);
    }
    let result = cli
        .command
        .parse::<Command>()
        .and_then(|cmd| run_cli(cmd, cli.config.as_deref(), &cli.overrides, cli.jobs));
    match result {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("reltask: {e}");
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
