//! `key = value` config files, spliced into argv ahead of the explicit flags.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Expands `--config FILE` (or `--config=FILE`) into the flags it lists.
///
/// File flags are inserted right after the subcommand name so that flags given
/// on the command line, appearing later, override them.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = it.next().context("--config requires a path")?;
            path = Some(p);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read config file {}", path.to_string_lossy()))?;
    let injected = parse(&text)?;
    // argv[0], then the subcommand (first non-flag token), then the file flags.
    let sub = rest
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.to_string_lossy().starts_with('-'))
        .map(|(i, _)| i + 1)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, injected);
    Ok(rest)
}

fn parse(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {raw:?}", i + 1);
        };
        let key = key.trim().trim_start_matches("--");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key {key:?}", i + 1);
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}
