//! `--config FILE` support: each `key = value` line supplies a default for
//! the long flag `--key` of the invoked command. Flags given on the command
//! line win.

use std::path::Path;

use clap::{ArgAction, Command};

use crate::commands::CliError;

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("config line {}: expected key = value", n + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        out.push((k.replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// The subcommand chain selected by `argv`, skipping flags and their values.
fn leaf_command<'a>(argv: &[String], root: &'a Command) -> &'a Command {
    let mut cmd = root;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if let Some(name) = a.strip_prefix("--") {
            let takes_value = !name.contains('=')
                && cmd
                    .get_arguments()
                    .chain(root.get_arguments())
                    .find(|x| x.get_long() == Some(name))
                    .is_some_and(|x| x.get_action().takes_values());
            i += if takes_value { 2 } else { 1 };
            continue;
        }
        match cmd.find_subcommand(a) {
            Some(sub) => cmd = sub,
            None => break,
        }
        i += 1;
    }
    cmd
}

pub fn apply_config_file(mut argv: Vec<String>, root: &Command) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| CliError::Usage(format!("config file {path}: {e}")))?;
    let entries = parse_config(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let leaf = leaf_command(&argv, root);
    let mut extra = Vec::new();
    for (key, value) in entries {
        let arg = leaf
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| CliError::Usage(format!("{path}: unknown key {key:?} for this command")))?;
        let flag = format!("--{key}");
        let given = argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => extra.push(flag),
                "false" => {}
                other => return Err(CliError::Usage(format!("{path}: {key} must be true or false, not {other:?}"))),
            }
        } else {
            extra.push(format!("{flag}={value}"));
        }
    }
    argv.extend(extra);
    Ok(argv)
}
