//! The `recip` pipeline: dataset generation and ingestion, training,
//! evaluation and attack evaluation. Each command writes a
//! `resolved_config.json` next to its outputs; `recip replay` re-runs it.

pub mod args;
pub mod commands;
pub mod dataset;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Result;

pub use args::{Cli, Command};

/// Overrides the directory that relative `--out` paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "RECIP_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// A user-input problem (exit code 1) rather than a runtime failure.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 1 for validation errors, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some() || e.downcast_ref::<reciprocal::Error>().is_some_and(|e| e.is_validation())
    });
    if validation {
        1
    } else {
        2
    }
}

/// Where an output directory lands: relative paths go under
/// `$RECIP_OUTPUT_ROOT` when it is set.
pub fn resolve_out(out: &Path) -> Result<PathBuf> {
    let base = match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    };
    Ok(std::path::absolute(base)?)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

/// Makes every path of `cmd` absolute so the resolved config replays from
/// any working directory.
fn resolve(mut cmd: Command) -> Result<Command> {
    use Command::*;
    match &mut cmd {
        Generate(a) => a.out = resolve_out(&a.out)?,
        Ingest(a) => {
            a.out = resolve_out(&a.out)?;
            for p in &mut a.inputs {
                *p = absolute(p)?;
            }
        }
        Train(a) => {
            a.out = resolve_out(&a.out)?;
            a.data = absolute(&a.data)?;
            if let Some(r) = &mut a.resume {
                *r = absolute(r)?;
            }
        }
        Eval(a) => {
            a.out = resolve_out(&a.out)?;
            a.data = absolute(&a.data)?;
            a.checkpoint = absolute(&a.checkpoint)?;
        }
        AttackEval(a) => {
            a.out = resolve_out(&a.out)?;
            a.data = absolute(&a.data)?;
            a.checkpoint = absolute(&a.checkpoint)?;
        }
        Replay(_) => {}
    }
    Ok(cmd)
}

/// Runs one command, writing its resolved config first.
pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        reciprocal::par::Execution::Sequential
    } else {
        reciprocal::par::Execution::default()
    };
    let cmd = match cli.command {
        Command::Replay(r) => {
            let text = std::fs::read_to_string(&r.config)
                .map_err(|e| invalid(format!("cannot read {}: {e}", r.config.display())))?;
            let mut cmd: Command = serde_json::from_str(&text)
                .map_err(|e| invalid(format!("malformed config {}: {e}", r.config.display())))?;
            if let (Some(out), Some(slot)) = (r.out, cmd.out_mut()) {
                *slot = out;
            }
            cmd
        }
        c => c,
    };
    let cmd = resolve(cmd)?;
    let out = match &cmd {
        Command::Generate(a) => &a.out,
        Command::Ingest(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::AttackEval(a) => &a.out,
        Command::Replay(_) => unreachable!("replay resolved above"),
    };
    let fresh = !out.exists();
    std::fs::create_dir_all(out)?;
    let config = out.join(RESOLVED_CONFIG);
    output::write_json(&config, &cmd)?;
    let result = match &cmd {
        Command::Generate(a) => commands::generate(a, exec),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a, exec),
        Command::Eval(a) => commands::eval(a, exec),
        Command::AttackEval(a) => commands::attack_eval(a, exec),
        Command::Replay(_) => unreachable!("replay resolved above"),
    };
    // A rejected invocation leaves nothing behind; runtime failures keep the
    // config for diagnosis.
    if let Err(e) = &result {
        if exit_code(e) == 1 {
            let _ = std::fs::remove_file(&config);
            if fresh {
                let _ = std::fs::remove_dir(out);
            }
        }
    }
    result
}
