use std::ffi::OsString;

use clap::CommandFactory;

use crate::{Cli, Failure};

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("config line {}: expected key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(p.into());
        }
    }
    None
}

/// Splices the flags of a `--config` file in front of the command-line
/// flags, so that later command-line values take precedence.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::input(format!("config file {}: {e}", path.to_string_lossy())))?;
    let entries = parse_config(&text)?;
    let cmd = Cli::command();
    let Some((pos, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(args);
    };
    let mut flags = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                Failure::input(format!(
                    "unknown config key `{key}` for `{}`",
                    sub.get_name()
                ))
            })?;
        if arg.get_action().takes_values() {
            flags.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" => flags.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => {
                    return Err(Failure::input(format!(
                        "config key `{key}` takes true or false"
                    )))
                }
            }
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
