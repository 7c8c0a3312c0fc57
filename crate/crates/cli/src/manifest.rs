use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliResult;

/// Record of one run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub library_version: &'static str,
    pub seed: Option<u64>,
    /// The parsed command line.
    pub arguments: Value,
    /// Effective settings after merging config files and flags.
    pub settings: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, arguments: &impl Serialize) -> Self {
        Manifest {
            command: command.into(),
            library_version: factorbreak::VERSION,
            seed: None,
            arguments: serde_json::to_value(arguments).unwrap_or(Value::Null),
            settings: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn settings(&mut self, settings: &impl Serialize) {
        self.settings = serde_json::to_value(settings).unwrap_or(Value::Null);
    }

    /// Write `contents` to `dir/name` and list it in the manifest.
    pub fn output(&mut self, dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(dir.join(name), contents)?;
        self.outputs.push(name.into());
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.outputs.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&self).map_err(factorbreak::Error::from)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
