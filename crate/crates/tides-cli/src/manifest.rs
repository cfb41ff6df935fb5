//! Run manifests: one `manifest.json` per artifact directory recording
//! what produced it, from what, and with which configuration.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tides::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: format!("tides-{}", env!("CARGO_PKG_VERSION")),
            duration_secs: 0.0,
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamp the duration and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, started: Instant) -> Result<()> {
        self.duration_secs = started.elapsed().as_secs_f64();
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self)?)?;
        Ok(())
    }
}
