//! Merges a key=value config file (or a previous run's manifest) into argv.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Command};

/// Normalized flag name: `K_upper` and `--K-upper` both map to `K-upper`.
fn flag_key(raw: &str) -> String {
    raw.trim().trim_start_matches("--").replace('_', "-")
}

/// Reads `key = value` lines; `#` starts a comment. A JSON manifest is
/// accepted as well, in which case its recorded config is used.
pub fn read_config_file(path: &str) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {path}"))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
        let cfg = v
            .get("config")
            .and_then(|c| c.as_object())
            .with_context(|| format!("{path} has no `config` object"))?;
        let mut out = BTreeMap::new();
        for (k, v) in cfg {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.insert(flag_key(k), s);
        }
        return Ok(out);
    }
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{path}:{}: expected key = value", lineno + 1);
        };
        let key = flag_key(k);
        if key.is_empty() {
            bail!("{path}:{}: empty key", lineno + 1);
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Flags named on the command line, without values.
fn explicit_flags(args: &[OsString]) -> BTreeSet<String> {
    args.iter()
        .filter_map(|a| a.to_str())
        .filter(|a| a.starts_with("--"))
        .map(|a| flag_key(a.split('=').next().unwrap_or(a)))
        .collect()
}

/// Finds `--config FILE` after the subcommand and splices the file's entries
/// in as flags. Flags given explicitly on the command line take precedence.
pub fn merge_config(argv: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>> {
    let Some(sub_pos) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        return Ok(argv);
    };
    let sub_name = argv[sub_pos].to_string_lossy().to_string();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let mut rest: Vec<OsString> = Vec::new();
    let mut config_path: Option<String> = None;
    let mut it = argv[sub_pos + 1..].iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = it.next().context("--config needs a file path")?;
            config_path = Some(v.to_string_lossy().to_string());
        } else if let Some(v) = s.strip_prefix("--config=") {
            config_path = Some(v.to_string());
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = config_path else {
        return Ok(argv);
    };
    let entries = read_config_file(&path)?;
    let known: BTreeSet<String> = sub.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect();
    let explicit = explicit_flags(&rest);
    let mut out: Vec<OsString> = argv[..=sub_pos].to_vec();
    for (k, v) in entries {
        if !known.contains(&k) {
            bail!("config key `{k}` is not a flag of `{sub_name}`");
        }
        if k == "config" || explicit.contains(&k) {
            continue;
        }
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend(rest);
    Ok(out)
}

/// Effective value of every flag of the invoked subcommand except the output
/// directory and the config file, keyed by long name. Absent optional flags
/// are omitted.
pub fn effective_config(sub: &Command, matches: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if long == "out" || long == "config" {
            continue;
        }
        let id = arg.get_id().as_str();
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().to_string()).collect();
            out.insert(long.to_string(), vals.join(","));
        }
    }
    out
}
