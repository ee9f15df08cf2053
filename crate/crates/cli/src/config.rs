//! Layered run configuration.
//!
//! Precedence, lowest first: built-in defaults, the JSON config file (flat
//! dotted keys such as `"extract.segments"`), command-line flags, then
//! `MOTIONFORGE_<SUBCOMMAND>_<FIELD>` environment variables. Environment
//! values are read as JSON, falling back to a plain string.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{io_err, CliError, CliResult};

pub const ENV_PREFIX: &str = "MOTIONFORGE_";

/// Flat `"sub.field" -> value` entries from a config file.
pub type FileConfig = BTreeMap<String, Value>;

fn env_key(sub: &str, field: &str) -> String {
    format!("{ENV_PREFIX}{}_{}", sub.replace('-', "_"), field).to_uppercase()
}

/// Reads a config file and rejects keys that name no subcommand flag.
pub fn load_file(path: &Path, root: &Command) -> CliResult<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let map: FileConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: expected a flat JSON object: {e}", path.display())))?;
    for key in map.keys() {
        let known = key.split_once('.').is_some_and(|(sub, field)| {
            !matches!(field, "config" | "help" | "version")
                && root.find_subcommand(sub).is_some_and(|c| c.get_arguments().any(|a| a.get_id().as_str() == field))
        });
        if !known {
            return Err(CliError::Config(format!("{}: unknown key '{key}'", path.display())));
        }
    }
    Ok(map)
}

/// Applies the file and environment layers on top of parsed flags.
pub fn resolve<T: Serialize + DeserializeOwned>(
    sub: &str,
    parsed: T,
    matches: &ArgMatches,
    file: &FileConfig,
    env: &[(String, String)],
) -> CliResult<T> {
    let Value::Object(mut fields) = serde_json::to_value(&parsed).expect("args serialize") else {
        unreachable!("subcommand args are structs")
    };
    let from_flag = |id: &str| matches!(matches.value_source(id), Some(ValueSource::CommandLine));
    let prefix = format!("{sub}.");
    for (key, value) in file {
        if let Some(field) = key.strip_prefix(&prefix) {
            if fields.contains_key(field) && !from_flag(field) {
                fields.insert(field.to_string(), value.clone());
            }
        }
    }
    let env_prefix = env_key(sub, "");
    for (name, raw) in env {
        let Some(_) = name.strip_prefix(&env_prefix) else { continue };
        let field = fields.keys().find(|f| env_key(sub, f) == *name).cloned();
        let Some(field) = field else {
            return Err(CliError::Config(format!("environment variable {name} names no '{sub}' option")));
        };
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        fields.insert(field, value);
    }
    serde_json::from_value(Value::Object(fields.clone()))
        .map_err(|e| CliError::Config(format!("invalid '{sub}' configuration: {e}")))
        .inspect(|_| echo(sub, &fields))
}

fn echo(sub: &str, fields: &Map<String, Value>) {
    let mut top = Map::new();
    top.insert(sub.to_string(), Value::Object(fields.clone()));
    eprintln!("resolved config: {}", Value::Object(top));
}

/// `MOTIONFORGE_*` variables from the process environment, sorted.
pub fn process_env() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Args, FromArgMatches, Parser, Subcommand};
    use serde::Deserialize;

    #[derive(Parser)]
    struct Root {
        #[command(subcommand)]
        cmd: Sub,
    }

    #[derive(Subcommand)]
    enum Sub {
        Run(RunArgs),
    }

    #[derive(Args, Serialize, Deserialize, Debug, PartialEq)]
    struct RunArgs {
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, default_value = "a")]
        name: String,
        #[arg(long)]
        flag: bool,
    }

    fn run(argv: &[&str], file: &[(&str, Value)], env: &[(&str, &str)]) -> CliResult<RunArgs> {
        use clap::CommandFactory;
        let m = Root::command().try_get_matches_from(argv).unwrap();
        let sm = m.subcommand_matches("run").unwrap();
        let parsed = RunArgs::from_arg_matches(sm).unwrap();
        let file: FileConfig = file.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let env: Vec<(String, String)> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        resolve("run", parsed, sm, &file, &env)
    }

    #[test]
    fn precedence_defaults_file_flags_env() {
        let base = run(&["x", "run"], &[], &[]).unwrap();
        assert_eq!(base, RunArgs { count: 3, name: "a".into(), flag: false });
        let file = [("run.count", Value::from(5)), ("run.flag", Value::from(true))];
        assert_eq!(run(&["x", "run"], &file, &[]).unwrap().count, 5);
        assert!(run(&["x", "run"], &file, &[]).unwrap().flag);
        assert_eq!(run(&["x", "run", "--count", "7"], &file, &[]).unwrap().count, 7);
        let env = [("MOTIONFORGE_RUN_COUNT", "9"), ("MOTIONFORGE_RUN_NAME", "zed")];
        let r = run(&["x", "run", "--count", "7"], &file, &env).unwrap();
        assert_eq!((r.count, r.name.as_str()), (9, "zed"));
    }

    #[test]
    fn bad_values_and_unknown_env_are_config_errors() {
        let file = [("run.count", Value::from("many"))];
        assert!(matches!(run(&["x", "run"], &file, &[]), Err(CliError::Config(_))));
        let env = [("MOTIONFORGE_RUN_COLOR", "red")];
        assert!(matches!(run(&["x", "run"], &[], &env), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        use clap::CommandFactory;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"run.count": 2}"#).unwrap();
        assert_eq!(load_file(&path, &Root::command()).unwrap().len(), 1);
        for bad in [r#"{"run.colour": 2}"#, r#"{"walk.count": 2}"#, r#"{"count": 2}"#, "[1]"] {
            fs::write(&path, bad).unwrap();
            assert!(matches!(load_file(&path, &Root::command()), Err(CliError::Config(_))), "{bad}");
        }
        assert!(matches!(load_file(&dir.path().join("missing.json"), &Root::command()), Err(CliError::Io(_))));
    }
}
