use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Record of one command run: the resolved configuration, digests of what
/// was read and written, and the headline results.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    /// File name inside the output directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub results: toml::Table,
    out_dir: PathBuf,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            results: toml::Table::new(),
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_string(), file_digest(path)?);
        Ok(())
    }

    /// Writes `bytes` to `name` in the output directory and records its digest.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn result(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn render(&self, timestamp: &str) -> String {
        let mut table = self.config.to_table();
        table.insert("tool_version".into(), TOOL_VERSION.into());
        table.insert("command".into(), self.command.clone().into());
        table.insert("timestamp".into(), timestamp.into());
        let section = |m: &BTreeMap<String, String>| {
            toml::Value::Table(m.iter().map(|(k, v)| (k.clone(), v.clone().into())).collect())
        };
        table.insert("inputs".into(), section(&self.inputs));
        table.insert("outputs".into(), section(&self.outputs));
        table.insert("results".into(), toml::Value::Table(self.results.clone()));
        toml::to_string(&table).expect("manifest serializes")
    }

    /// Writes `manifest.toml` next to the outputs.
    pub fn save(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(MANIFEST_FILE);
        let stamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        std::fs::write(&path, self.render(&stamp))?;
        Ok(path)
    }
}
