//! TOML defaults merged under command-line flags.
//!
//! The file holds global options at the top level and one table per
//! subcommand. Each key becomes `--key=value` unless the same option was given
//! on the command line, so flags always win.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use toml::{Table, Value};

#[derive(Debug)]
pub struct ConfigError(pub String);

fn scalar(key: &str, v: &Value) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(ConfigError(format!("config key {key:?}: unsupported value {v}"))),
    }
}

fn given_on_command_line(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

/// Flags for one table of the config. `cmd` validates the keys and `m` says
/// which options the user already set.
fn table_flags(table: &Table, cmd: &Command, m: &ArgMatches, skip_tables: bool) -> Result<Vec<String>, ConfigError> {
    let mut out = Vec::new();
    for (key, value) in table {
        if matches!(value, Value::Table(_)) {
            if skip_tables {
                continue;
            }
            return Err(ConfigError(format!("config key {key:?}: nested tables are not options")));
        }
        let flag = key.replace('_', "-");
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()))
            .ok_or_else(|| ConfigError(format!("config key {key:?} is not an option of `{}`", cmd.get_name())))?;
        if given_on_command_line(m, arg.get_id().as_str()) {
            continue;
        }
        match value {
            Value::Boolean(true) => out.push(format!("--{flag}")),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    out.push(format!("--{flag}={}", scalar(key, item)?));
                }
            }
            v => out.push(format!("--{flag}={}", scalar(key, v)?)),
        }
    }
    Ok(out)
}

/// Returns `argv` with the config's options spliced in after the subcommand
/// name, or `argv` unchanged if `--config` was not given.
pub fn merge(argv: Vec<OsString>, root: &Command, matches: &ArgMatches, path: Option<&Path>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let table: Table = text.parse().map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let (name, sub_m) = matches.subcommand().ok_or_else(|| ConfigError("no subcommand".into()))?;
    let mut root = root.clone();
    root.build();
    let sub = root.find_subcommand(name).expect("parsed subcommand exists");

    let mut extra = Vec::new();
    // Global options are propagated into the subcommand, so both tables are
    // checked against the subcommand's arguments.
    extra.extend(table_flags(&table, sub, sub_m, true)?);
    for (key, value) in &table {
        if let Value::Table(t) = value {
            if root.find_subcommand(key).is_none() {
                return Err(ConfigError(format!("config table [{key}] is not a subcommand")));
            }
            if key == name {
                extra.extend(table_flags(t, sub, sub_m, false)?);
            }
        }
    }
    let at = argv.iter().position(|a| a.to_str() == Some(name)).map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use clap::{Arg, ArgAction};

    use super::*;

    fn cli() -> Command {
        Command::new("t")
            .arg(Arg::new("seed").long("seed").global(true).default_value("0"))
            .subcommand(
                Command::new("run")
                    .arg(Arg::new("batch_size").long("batch-size").default_value("32"))
                    .arg(Arg::new("fast").long("fast").action(ArgAction::SetTrue))
                    .arg(Arg::new("part").long("part").action(ArgAction::Append)),
            )
            .subcommand(Command::new("other"))
    }

    fn run(config: &str, args: &[&str]) -> Result<ArgMatches, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, config).unwrap();
        let argv: Vec<OsString> = args.iter().map(OsString::from).collect();
        let m = cli().try_get_matches_from(&argv).unwrap();
        let merged = merge(argv, &cli(), &m, Some(&path))?;
        Ok(cli().try_get_matches_from(merged).unwrap())
    }

    fn sub(m: &ArgMatches) -> &ArgMatches {
        m.subcommand_matches("run").unwrap()
    }

    #[test]
    fn config_fills_defaults_and_flags_win() {
        let m = run("seed = 7\n[run]\nbatch_size = 8\nfast = true\npart = [\"Eye\", \"Ear\"]\n", &["t", "run"]).unwrap();
        let s = sub(&m);
        assert_eq!(s.get_one::<String>("seed").unwrap(), "7");
        assert_eq!(s.get_one::<String>("batch_size").unwrap(), "8");
        assert!(s.get_flag("fast"));
        assert_eq!(s.get_many::<String>("part").unwrap().collect::<Vec<_>>(), ["Eye", "Ear"]);

        let m = run("seed = 7\n[run]\nbatch-size = 8\npart = [\"Eye\"]\n", &["t", "run", "--batch-size", "4", "--seed=1", "--part=Nose"]).unwrap();
        let s = sub(&m);
        assert_eq!(s.get_one::<String>("seed").unwrap(), "1");
        assert_eq!(s.get_one::<String>("batch_size").unwrap(), "4");
        assert_eq!(s.get_many::<String>("part").unwrap().collect::<Vec<_>>(), ["Nose"]);
    }

    #[test]
    fn other_tables_are_ignored_and_bad_keys_rejected() {
        assert!(run("[other]\n", &["t", "run"]).is_ok());
        assert!(run("[run]\nnope = 1\n", &["t", "run"]).is_err());
        assert!(run("[nothing]\n", &["t", "run"]).is_err());
        assert!(run("[run]\nbatch_size = { a = 1 }\n", &["t", "run"]).is_err());
    }
}
