use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

/// Optional TOML settings. Keys match the long flag names (dashes or
/// underscores); a `[command]` table overrides top-level keys for that
/// command, and flags override both.
#[derive(Debug, Default)]
pub struct Config {
    top: toml::Table,
    section: toml::Table,
    origin: Option<PathBuf>,
}

fn normalize(table: toml::Table) -> toml::Table {
    table.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect()
}

impl Config {
    pub fn load(path: Option<&Path>, command: &str) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("reading config {}: {e}", path.display())))?;
        let mut top: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("parsing config {}: {e}", path.display())))?;
        let section = match top.remove(command) {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(CliError::config(format!("{}: `{command}` must be a table", path.display()))),
            None => toml::Table::new(),
        };
        Ok(Self {
            top: normalize(top),
            section: normalize(section),
            origin: Some(path.to_path_buf()),
        })
    }

    pub fn origin(&self) -> Option<&Path> {
        self.origin.as_deref()
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> CliResult<Option<T>> {
        let Some(v) = self.section.get(key).or_else(|| self.top.get(key)) else {
            return Ok(None);
        };
        v.clone()
            .try_into()
            .map(Some)
            .map_err(|e| CliError::config(format!("config key `{key}`: {e}")))
    }

    /// The flag value if given, else the config value.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> CliResult<T> {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::config(format!("missing required setting --{key}")))
    }
}
