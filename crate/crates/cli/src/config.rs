//! Flat `key = value` config files mirroring the command-line flags.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses a config file into `--key=value` arguments. `true` becomes a bare
/// `--key`, `false` drops the key. Blank lines and `#` comments are skipped.
pub fn config_args(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, found `{line}`", i + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key `{key}`", i + 1);
        }
        let args = match value {
            "true" => vec![format!("--{key}")],
            "false" => vec![],
            v => vec![format!("--{key}={v}")],
        };
        out.push((key, args));
    }
    Ok(out)
}

fn flag_name(arg: &str) -> Option<&str> {
    let rest = arg.strip_prefix("--")?;
    Some(rest.split_once('=').map_or(rest, |(k, _)| k))
}

fn config_path(args: &[String]) -> Option<&str> {
    args.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => args.get(i + 1).map(String::as_str),
        Some(rest) => rest.strip_prefix('='),
        None => None,
    })
}

/// Splices the `--config` file's settings into `args` right after the
/// subcommand. Flags given on the command line win.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading config {path}"))?;
    let entries = config_args(&text).with_context(|| format!("in config {path}"))?;
    let given: BTreeSet<&str> = args.iter().filter_map(|a| flag_name(a)).collect();
    let extra: Vec<String> =
        entries.into_iter().filter(|(k, _)| !given.contains(k.as_str())).flat_map(|(_, a)| a).collect();
    let split = args.len().min(2);
    let mut out = args[..split].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[split..]);
    Ok(out)
}
