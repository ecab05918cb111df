//! Scripted harness: answers the line protocol on stdin/stdout from a trace
//! file and any frozen runs for it.
//!
//! Usage: `tcu-echo <trace> [--frozen <glob>]...`

use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use tcu_core::provider::serve_echo;
use tcu_core::trace::load_bundles;

fn run() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let mut trace = None;
    let mut frozen = Vec::new();
    while let Some(a) = args.next() {
        match a.as_str() {
            "--frozen" => {
                let pattern = args.next().ok_or_else(|| anyhow!("--frozen needs a glob"))?;
                for entry in glob::glob(&pattern)? {
                    frozen.push(entry?);
                }
            }
            _ if trace.is_none() => trace = Some(PathBuf::from(a)),
            other => bail!("unexpected argument `{other}`"),
        }
    }
    let trace = trace.ok_or_else(|| anyhow!("usage: tcu-echo <trace> [--frozen <glob>]"))?;
    frozen.sort();
    let (_, bundle) = load_bundles(&[trace], &frozen)?.pop().expect("one trace requested");
    let bundle = bundle?;
    let stdin = io::stdin();
    serve_echo(&bundle, stdin.lock(), BufWriter::new(io::stdout().lock())).context("session failed")?;
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tcu-echo: {e:#}");
            ExitCode::FAILURE
        }
    }
}
