//! Run manifest: every command drops a `manifest.json` next to its outputs
//! recording the resolved config, input hashes, and the artifacts written.
//! No timestamps — reruns with identical inputs produce identical bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use trajformer_core::config::{render_config, Config};
use trajformer_core::scenegen::dataset::file_sha256;
use trajformer_core::Result;

#[derive(Serialize)]
pub struct DatasetRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &Config) -> Manifest {
        Manifest {
            tool: "trajformer".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config: render_config(config),
            dataset: None,
            checkpoint: None,
            artifacts: Vec::new(),
        }
    }

    pub fn with_dataset(mut self, path: &Path) -> Result<Manifest> {
        self.dataset = Some(DatasetRef {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(self)
    }

    pub fn with_checkpoint(mut self, path: &Path) -> Manifest {
        self.checkpoint = Some(path.display().to_string());
        self
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifacts.push(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
    }

    pub fn write(&self, path: &PathBuf) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}
