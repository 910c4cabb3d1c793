//! `--config FILE`: a TOML table whose keys are the subcommand's long flag
//! names. The file is expanded into ordinary flags placed right after the
//! subcommand. Keys also given on the command line are skipped.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use clap::CommandFactory;

use crate::Cli;

/// Removes `--config PATH` from `args` and splices the file's keys in as
/// flags. Returns `args` untouched when no config file is named.
pub fn expand(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((idx, path, width)) = find_config(&args)? else {
        return Ok(args);
    };
    args.drain(idx..idx + width);

    let sub_idx = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 1)
        .ok_or_else(|| anyhow!("--config needs a subcommand"))?;
    let sub = args[sub_idx].to_string_lossy().into_owned();
    let given: HashSet<String> = args[sub_idx + 1..]
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).to_owned()))
        .collect();
    let flags = flags_from_file(Path::new(&path), &sub, &given)?;
    args.splice(sub_idx + 1..sub_idx + 1, flags);
    Ok(args)
}

fn find_config(args: &[OsString]) -> Result<Option<(usize, String, usize)>> {
    for (i, a) in args.iter().enumerate().skip(1) {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if let Some(path) = a.strip_prefix("--config=") {
            return Ok(Some((i, path.to_owned(), 1)));
        }
        if a == "--config" {
            let path = args.get(i + 1).ok_or_else(|| anyhow!("--config needs a file path"))?;
            return Ok(Some((i, path.to_string_lossy().into_owned(), 2)));
        }
    }
    Ok(None)
}

fn known_flags(sub: &str) -> Result<HashSet<String>> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(sub).ok_or_else(|| anyhow!("unknown subcommand `{sub}`"))?;
    Ok(sub.get_arguments().filter_map(|a| a.get_long()).map(str::to_owned).collect())
}

fn scalar(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(x) => x.to_string(),
        other => bail!("config key `{key}`: unsupported value {other}"),
    })
}

fn flags_from_file(path: &Path, sub: &str, given: &HashSet<String>) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let known = known_flags(sub)?;
    let mut out = Vec::new();
    for (key, value) in &table {
        let flag = key.replace('_', "-");
        if !known.contains(&flag) {
            bail!("unknown key `{key}` in {} for `{sub}`", path.display());
        }
        if given.contains(&flag) {
            continue;
        }
        let long = format!("--{flag}");
        match value {
            toml::Value::Boolean(true) => out.push(long.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) if flag == "crash-at" => {
                for item in items {
                    out.push(long.clone().into());
                    out.push(scalar(key, item)?.into());
                }
            }
            toml::Value::Array(items) => {
                let joined = items.iter().map(|i| scalar(key, i)).collect::<Result<Vec<_>>>()?.join(",");
                out.push(long.into());
                out.push(joined.into());
            }
            v => {
                out.push(long.into());
                out.push(scalar(key, v)?.into());
            }
        }
    }
    Ok(out)
}
