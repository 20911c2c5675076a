use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};

/// Everything needed to rerun a command: its arguments, seed and the hashes
/// of every input file.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("hashing {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("command".into(), command.into());
        entries.insert("seed".into(), seed.to_string());
        entries.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
        let argv: Vec<String> = std::env::args().skip(1).collect();
        entries.insert("argv".into(), argv.join(" "));
        Self { entries }
    }

    /// A manifest that also records the config file, if one was used.
    pub fn for_run(command: &str, seed: u64, cfg: &Config) -> CliResult<Self> {
        let mut m = Self::new(command, seed);
        if let Some(path) = cfg.origin() {
            m.input("config", path)?;
        }
        Ok(m)
    }

    pub fn param(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.insert(format!("param.{key}"), value.to_string());
        self
    }

    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<&mut Self> {
        let digest = sha256_file(path)?;
        self.entries.insert(format!("input.{label}"), path.display().to_string());
        self.entries.insert(format!("sha256.{label}"), digest);
        Ok(self)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Writes `<out>.manifest.json` next to an output.
    pub fn write_beside(&self, out: &Path) -> CliResult<PathBuf> {
        let path = sibling(out, ".manifest.json");
        let text = serde_json::to_string_pretty(&self.entries).expect("string map serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}
