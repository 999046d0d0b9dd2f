//! Flat `key = value` run configuration.
//!
//! A config file holds one assignment per line; blank lines and lines
//! starting with `#` are ignored. Every command owns a fixed key set and
//! rejects anything else. The fully resolved settings are echoed in the
//! same format, so an echo file is itself a valid config.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::exit::CliError;

/// Settings addressable by flat keys.
pub trait Settings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String>;
    /// Every key with its current value, in a fixed order.
    fn entries(&self) -> Vec<(String, String)>;
}

/// Parses `key = value` lines; line numbers in errors are 1-based.
pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| CliError::usage(format!("{origin}:{}: {e}", i + 1)))?;
        out.push((k, v));
    }
    Ok(out)
}

pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key = value, got '{s}'"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in '{s}'"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Applies the config file, then `overrides` in order.
pub fn resolve<S: Settings>(settings: &mut S, file: Option<&Path>, overrides: &[(String, String)]) -> Result<(), CliError> {
    let mut pairs = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        pairs.extend(parse_text(&text, &path.display().to_string())?);
    }
    pairs.extend(overrides.iter().cloned());
    for (k, v) in &pairs {
        settings.set(k, v).map_err(|e| CliError::usage(format!("{k}: {e}")))?;
    }
    Ok(())
}

pub fn echo<S: Settings>(command: &str, settings: &S) -> String {
    let mut out = format!("# empowerkit {command}\n");
    for (k, v) in settings.entries() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

pub fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
}

pub fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

/// Comma-separated list; an empty value is an empty list.
pub fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| num(p.trim())).collect()
}

pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn unknown(key: &str) -> String {
    format!("unknown key '{key}'")
}
