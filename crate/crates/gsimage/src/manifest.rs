//! Reproducibility record written next to every command's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gsimage_core::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, enough to re-run the command.
    pub args: Vec<String>,
    pub input: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub config: TrainConfig,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, input: PathBuf, config: TrainConfig, workers: usize) -> Self {
        Self {
            command: command.to_owned(),
            args,
            input,
            outputs: Vec::new(),
            seed: config.seed,
            workers,
            config,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// `out.ext` → `out.ext.manifest.json`.
pub fn default_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsimage_core::Parameterization;

    #[test]
    fn config_survives_serialization() {
        let mut cfg = TrainConfig::for_iterations(1234);
        cfg.parameterization = Parameterization::RotScale;
        cfg.lr_covariance = 0.0123456789012345;
        cfg.caf_alpha = 1.0 / 3.0;
        cfg.enable_caf = false;
        let m = RunManifest::new("fit", vec!["--input".into(), "x.png".into()], "x.png".into(), cfg, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(default_path(Path::new("a/b.g2gs")), PathBuf::from("a/b.g2gs.manifest.json"));
    }
}
