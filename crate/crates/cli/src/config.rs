//! Flat `key = value` config files whose keys mirror long flag names.
//!
//! Values become argument defaults before the real parse, so anything given
//! on the command line wins.

use std::path::Path;

use clap::Command;

/// Finds `--config <path>` or `--config=<path>` in raw arguments.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys accept `-` or `_`.
pub fn parse(text: &str, source: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected `key = value`", source.display(), i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("{}:{}: empty key", source.display(), i + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Installs config values as defaults on the root command (global flags)
/// or on `subcommand`. Unknown keys are errors.
pub fn apply(mut cmd: Command, subcommand: Option<&str>, entries: Vec<(String, String)>) -> Result<Command, String> {
    for (key, value) in entries {
        let value: &'static str = Box::leak(value.into_boxed_str());
        let on_root = cmd.get_arguments().any(|a| a.get_long() == Some(key.as_str()));
        let on_sub = subcommand
            .and_then(|s| cmd.find_subcommand(s))
            .is_some_and(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
        if key == "config" {
            return Err("`config` cannot be set from a config file".into());
        }
        let id = key.clone();
        if on_sub {
            let name = subcommand.expect("checked above").to_string();
            cmd = cmd.mut_subcommand(name, |s| {
                let id = s
                    .get_arguments()
                    .find(|a| a.get_long() == Some(id.as_str()))
                    .map(|a| a.get_id().clone())
                    .expect("argument exists");
                s.mut_arg(id, |a| a.default_value(value).required(false))
            });
        } else if on_root {
            let arg_id = cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(id.as_str()))
                .map(|a| a.get_id().clone())
                .expect("argument exists");
            cmd = cmd.mut_arg(arg_id, |a| a.default_value(value));
        } else {
            return Err(format!(
                "unknown config key `{key}` for `{}`",
                subcommand.unwrap_or("ssrfcn")
            ));
        }
    }
    Ok(cmd)
}

/// First non-flag argument naming a known subcommand.
pub fn find_subcommand<'a>(cmd: &Command, args: &'a [String]) -> Option<&'a str> {
    let mut skip_next = false;
    for a in args.iter().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        if a == "--config" {
            skip_next = true;
            continue;
        }
        if a.starts_with('-') {
            continue;
        }
        if cmd.find_subcommand(a).is_some() {
            return Some(a.as_str());
        }
    }
    None
}
