//! Command-line front door. Every command takes a JSON config (or the
//! built-in default), applies `--key value` overrides, writes its tables
//! and a `manifest.json` to the output directory and reports progress on
//! standard error.

mod commands;
mod config;
mod manifest;
mod resolve;
mod selftest;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub use commands::is_singular;
pub use config::*;
pub use manifest::{canonical_json, config_hash, Outputs, RunManifest};
pub use resolve::{default_document, parse_overrides, parse_value, resolve_document, SEED_ENV};
pub use selftest::{run_selftest, CheckLine, SelftestReport, Verdict};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Gen,
    Train,
    Kernel,
    Nmatrix,
    Probe,
    Sweep,
    Figures,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Gen,
        Command::Train,
        Command::Kernel,
        Command::Nmatrix,
        Command::Probe,
        Command::Sweep,
        Command::Figures,
        Command::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Kernel => "kernel",
            Command::Nmatrix => "nmatrix",
            Command::Probe => "probe",
            Command::Sweep => "sweep",
            Command::Figures => "figures",
            Command::Selftest => "selftest",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

/// Outcome of a command that did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some cells or checks failed; the rest was written.
    Partial,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Partial => 1,
        }
    }
}

/// Exit code for fatal errors.
pub const EXIT_FATAL: i32 = 2;

/// Parses the document into the typed config, then hashes the config as
/// re-serialized so defaults count towards the hash. The output directory
/// is left out: moving a run does not change its numbers.
fn typed<T: Serialize + DeserializeOwned>(doc: Value) -> Result<(T, Value, String)> {
    let cfg: T = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
    let canon = serde_json::to_value(&cfg)?;
    let mut hashed = canon.clone();
    if let Some(m) = hashed.as_object_mut() {
        m.remove("out_dir");
    }
    let hash = config_hash(&hashed);
    Ok((cfg, canon, hash))
}

fn with_outputs<T, F>(cmd: Command, doc: Value, seed_of: fn(&T) -> u64, out_of: fn(&T) -> &Path, body: F) -> Result<Status>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce(&T, &mut Outputs) -> Result<Status>,
{
    let started = manifest::now_unix();
    let (cfg, canon, hash) = typed::<T>(doc)?;
    let mut out = Outputs::new(out_of(&cfg), &hash)?;
    let status = body(&cfg, &mut out)?;
    out.finish(cmd.name(), canon, seed_of(&cfg), started)?;
    Ok(status)
}

/// Runs one command on a resolved config document.
pub fn run(cmd: Command, doc: Value, jobs: usize) -> Result<Status> {
    let jobs = jobs.max(1);
    match cmd {
        Command::Gen => with_outputs(cmd, doc, |c: &GenConfig| c.seed, |c| &c.out_dir, commands::cmd_gen),
        Command::Train => with_outputs(cmd, doc, |c: &TrainCmdConfig| c.seed, |c| &c.out_dir, commands::cmd_train),
        Command::Kernel => with_outputs(cmd, doc, |c: &KernelCmdConfig| c.seed, |c| &c.out_dir, commands::cmd_kernel),
        Command::Nmatrix => {
            with_outputs(cmd, doc, |c: &NMatrixCmdConfig| c.seed, |c| &c.out_dir, commands::cmd_nmatrix)
        }
        Command::Probe => with_outputs(cmd, doc, |c: &ProbeCmdConfig| c.seed, |c| &c.out_dir, commands::cmd_probe),
        Command::Sweep => with_outputs(cmd, doc, |c: &SweepCmdConfig| c.seed, |c| &c.out_dir, |c, o| {
            commands::cmd_sweep(c, jobs, o)
        }),
        Command::Figures => with_outputs(cmd, doc, |c: &FiguresConfig| c.seed, |c| &c.out_dir, |c, o| {
            commands::cmd_figures(c, jobs, o)
        }),
        Command::Selftest => {
            let (cfg, _, _) = typed::<SelftestConfig>(doc)?;
            let report = run_selftest(cfg.seed);
            for l in &report.lines {
                let v = match l.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::Deferred => "DEFERRED",
                };
                println!("{:<18} {v:<8} {:>7.2}s  {}", l.id, l.secs, l.detail);
            }
            Ok(if report.all_pass() { Status::Ok } else { Status::Partial })
        }
    }
}

/// Resolves the config for `cmd` from the file, `RELTASK_SEED` and the
/// overrides, then runs it.
pub fn run_cli(cmd: Command, config: Option<&Path>, overrides: &[String], jobs: usize) -> Result<Status> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let doc = resolve_document(cmd, config, overrides, env_seed.as_deref())?;
    run(cmd, doc, jobs)
}
