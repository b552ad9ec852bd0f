//! Run manifests and config-file loading.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ladder_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Written next to every command's output. Feeding it back through
/// `--config` re-runs the command with the same resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>, started_unix: f64) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            threads: rayon::current_num_threads(),
            started_unix,
            finished_unix: started_unix,
        })
    }

    pub fn save(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        write_json(path, &self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Reads a command config from either a bare config object or a manifest
/// written by the same command.
pub fn load_config<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T> {
    let value: serde_json::Value = read_json(path)?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    let config = if is_manifest {
        let found = value["command"].as_str().unwrap_or_default();
        if found != command {
            return Err(Error::Config(format!(
                "{} is a manifest for '{found}', not '{command}'",
                path.display()
            )));
        }
        value["config"].clone()
    } else {
        value
    };
    serde_json::from_value(config).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `out.json` -> `out.json.manifest.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
