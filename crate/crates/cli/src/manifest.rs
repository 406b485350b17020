use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::data::read_text;
use crate::error::{CliError, CliResult};
use crate::output;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a run: the parsed command line and the
/// configuration it resolved to, with all defaults filled in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub inputs: Vec<String>,
    pub seed: u64,
    pub resolved: serde_json::Value,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &Command, inputs: Vec<String>, seed: u64, resolved: &T) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
            inputs,
            seed,
            resolved: serde_json::to_value(resolved).expect("serializable config"),
        }
    }

    /// Written at full precision so a rerun sees exactly the same inputs.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(self).expect("serializable manifest");
        s.push('\n');
        output::write(dir, MANIFEST_FILE, &s)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: not a run manifest: {e}", path.display())))
    }
}
