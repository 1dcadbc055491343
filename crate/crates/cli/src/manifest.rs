//! `manifest.json`: what produced an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use basicmip::config::TrainConfig;
use basicmip::fingerprint::file_sha256;
use basicmip::{Error, Result};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
    /// Resolved config, echoed for auditing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    /// Content hashes of every input.
    pub data_fingerprints: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output files by name, relative to the manifest's directory.
    pub artifacts: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config_fingerprint: None,
            config: None,
            data_fingerprints: BTreeMap::new(),
            seed: None,
            artifacts: BTreeMap::new(),
            versions: BTreeMap::from([
                ("basicmip".to_string(), basicmip::VERSION.to_string()),
                ("basicmip-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ]),
        }
    }

    pub fn with_config(mut self, config: &TrainConfig) -> Self {
        self.config_fingerprint = Some(config.fingerprint());
        self.seed = Some(config.seed);
        self.config = Some(config.clone());
        self
    }

    pub fn input(&mut self, name: impl Into<String>, fingerprint: impl Into<String>) {
        self.data_fingerprints.insert(name.into(), fingerprint.into());
    }

    pub fn input_file(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.input(name, file_sha256(path)?);
        Ok(())
    }

    /// Records `dir/file`, which must exist.
    pub fn artifact(&mut self, dir: &Path, file: &str) -> Result<()> {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(Error::Validation(format!("artifact {} was not written", path.display())));
        }
        let name = file.rsplit_once('.').map_or(file, |(stem, _)| stem);
        self.artifacts.insert(name.to_string(), file.to_string());
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

