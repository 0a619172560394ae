//! TOML config files layered over defaults, and run directories.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.toml";

pub fn read_table(path: Option<&Path>) -> CliResult<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `base` with the keys of `file` laid over it; unknown keys are rejected by
/// the target type.
pub fn layered<T: Serialize + DeserializeOwned>(base: &T, file: toml::Table, what: &str) -> CliResult<T> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    overlay(&mut table, file);
    table.try_into().map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

/// Creates `dir`, refusing one that already holds a run unless `force`.
pub fn prepare_run_dir(dir: &Path, force: bool) -> CliResult {
    if dir.join(CONFIG_FILE).exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already holds a run; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(e.into()))
}

pub fn write_config<T: Serialize>(dir: &Path, cfg: &T) -> CliResult {
    let text = toml::to_string_pretty(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(dir.join(CONFIG_FILE), text).map_err(|e| CliError::Domain(e.into()))
}

pub fn required<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing `{key}` (flag --{} or config key)", key.replace('_', "-"))))
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        a: u32,
        b: f64,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        name: String,
        inner: Inner,
    }

    #[test]
    fn file_keys_override_nested_defaults() {
        let base = Outer { name: "x".into(), inner: Inner { a: 1, b: 2.0 } };
        let file: toml::Table = "[inner]\nb = 5.0".parse().unwrap();
        let out = layered(&base, file, "t").unwrap();
        assert_eq!(out, Outer { name: "x".into(), inner: Inner { a: 1, b: 5.0 } });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let base = Outer { name: "x".into(), inner: Inner { a: 1, b: 2.0 } };
        let file: toml::Table = "[inner]\nc = 5".parse().unwrap();
        assert!(matches!(layered(&base, file, "t"), Err(CliError::Usage(_))));
    }

    #[test]
    fn run_dir_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        prepare_run_dir(dir.path(), false).unwrap();
        write_config(dir.path(), &Inner { a: 1, b: 1.0 }).unwrap();
        assert!(matches!(prepare_run_dir(dir.path(), false), Err(CliError::Usage(_))));
        prepare_run_dir(dir.path(), true).unwrap();
    }
}
