//! JSON config files are turned into flags placed right after the subcommand,
//! ahead of the user's own flags. Every argument overrides itself, so a flag
//! given on the command line replaces the config value.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::CommandFactory;
use serde_json::Value;

use crate::args::{Cli, Command};
use crate::error::CliError;

const GLOBAL_FLAGS: [&str; 2] = ["threads", "log-level"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut iter = argv.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return iter.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn long_flags(command: &str) -> Vec<String> {
    let cli = Cli::command();
    cli.find_subcommand(command)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long().map(str::to_string))
                .collect()
        })
        .unwrap_or_default()
}

fn render(key: &str, value: &Value) -> Result<Option<Vec<String>>, CliError> {
    let flag = format!("--{key}");
    let scalar = |v: &Value| -> Result<String, CliError> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            _ => Err(CliError::Usage(format!(
                "config key '{key}' must be a string, number, boolean or array of those"
            ))),
        }
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => None,
        Value::Bool(true) => Some(vec![flag]),
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            Some(vec![flag, parts.join(",")])
        }
        other => Some(vec![flag, scalar(other)?]),
    })
}

/// Returns `argv` with the config file's flags spliced in after the subcommand.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Usage(format!(
            "config file {} is not valid JSON: {e}",
            path.display()
        ))
    })?;
    let Value::Object(doc) = doc else {
        return Err(CliError::Usage(format!(
            "config file {} must hold a JSON object",
            path.display()
        )));
    };
    let Some(position) = argv
        .iter()
        .position(|a| Command::NAMES.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let command = argv[position].to_string_lossy().into_owned();
    let own: Vec<String> = long_flags(&command);
    let any_command = |key: &str| {
        Command::NAMES
            .iter()
            .any(|c| long_flags(c).iter().any(|f| f == key))
    };

    // Top-level keys first, then this command's section on top of them.
    let mut values: BTreeMap<String, Value> = BTreeMap::new();
    for (key, value) in &doc {
        if Command::NAMES.contains(&key.as_str()) {
            if !value.is_object() {
                return Err(CliError::Usage(format!(
                    "config section '{key}' must be an object"
                )));
            }
            continue;
        }
        let key = key.replace('_', "-");
        let known = own.contains(&key) || GLOBAL_FLAGS.contains(&key.as_str());
        if key == "config" || !(known || any_command(&key)) {
            return Err(CliError::Usage(format!(
                "config key '{key}' is not a flag of any command"
            )));
        }
        if known {
            values.insert(key, value.clone());
        }
    }
    if let Some(Value::Object(section)) = doc.get(&command) {
        for (key, value) in section {
            let key = key.replace('_', "-");
            if !own.contains(&key) && !GLOBAL_FLAGS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config key '{key}' in section '{command}' is not a flag of '{command}'"
                )));
            }
            values.insert(key, value.clone());
        }
    }

    let mut injected = Vec::new();
    for (key, value) in &values {
        if let Some(tokens) = render(key, value)? {
            injected.extend(tokens.into_iter().map(OsString::from));
        }
    }
    let mut out = argv;
    out.splice(position + 1..position + 1, injected);
    Ok(out)
}
