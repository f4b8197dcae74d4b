//! `--config` files: TOML tables turned into extra command-line flags.
//!
//! Top-level keys apply to every subcommand; a table named after the
//! subcommand adds keys for that subcommand only. Each `key = value` becomes
//! `--key value` (underscores become dashes), arrays are comma-joined, `true`
//! becomes a bare flag and `false` is dropped.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use percloud::{Error, Result};
use toml::{Table, Value};

/// Path given by `--config FILE` or `--config=FILE`, if any.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// First argument naming one of `subcommands`.
pub fn subcommand_of<'a>(argv: &[OsString], subcommands: &[&'a str]) -> Option<&'a str> {
    argv.iter()
        .skip(1)
        .find_map(|a| subcommands.iter().find(|s| a.to_str() == Some(**s)).copied())
}

pub fn load(path: &Path, subcommand: Option<&str>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)?;
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Validation(format!("config {}: {e}", path.display())))?;
    to_args(&table, subcommand, subcommands)
}

pub fn to_args(table: &Table, subcommand: Option<&str>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        if subcommands.contains(&key.as_str()) {
            continue;
        }
        push_flag(&mut out, key, value)?;
    }
    if let Some(sub) = subcommand {
        match table.get(sub) {
            None => {}
            Some(Value::Table(t)) => {
                for (key, value) in t {
                    push_flag(&mut out, key, value)?;
                }
            }
            Some(_) => return Err(Error::Validation(format!("config key '{sub}' must be a table"))),
        }
    }
    Ok(out)
}

fn push_flag(out: &mut Vec<OsString>, key: &str, value: &Value) -> Result<()> {
    if key == "config" {
        return Err(Error::Validation("config files cannot include other config files".into()));
    }
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        Value::Boolean(true) => out.push(flag.into()),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            let parts = items.iter().map(|v| scalar(key, v)).collect::<Result<Vec<_>>>()?;
            out.push(format!("{flag}={}", parts.join(",")).into());
        }
        v => {
            out.push(flag.into());
            out.push(scalar(key, v)?.into());
        }
    }
    Ok(())
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(Error::Validation(format!("config key '{key}' has an unsupported value"))),
    }
}
