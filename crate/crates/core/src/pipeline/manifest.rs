use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything needed to reproduce a run, written next to its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `train`, `evaluate`, `benchmark`, `ablate`, ...
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub dataset_manifest_hash: Option<String>,
    pub checkpoint_path: Option<PathBuf>,
    pub best_checkpoint_path: Option<PathBuf>,
    pub metric_report_path: Option<PathBuf>,
    /// `Some(false)` when the perceptual loss ran on the seeded random extractor.
    pub perceptual_extractor_pretrained: Option<bool>,
    pub worker_threads: usize,
    pub deterministic: bool,
    pub crate_version: String,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(kind: &str, seed: u64, config: serde_json::Value, config_hash: String) -> Self {
        Self {
            kind: kind.to_string(),
            seed,
            config,
            config_hash,
            dataset_manifest_hash: None,
            checkpoint_path: None,
            best_checkpoint_path: None,
            metric_report_path: None,
            perceptual_extractor_pretrained: None,
            worker_threads: 1,
            deterministic: true,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn set_extractor(&mut self, pretrained: Option<bool>) {
        self.perceptual_extractor_pretrained = pretrained;
        if pretrained == Some(false) {
            self.notes.insert(
                "perceptual_extractor".into(),
                "random fallback weights; perceptual term is not comparable to a pretrained run".into(),
            );
        }
    }

    /// Records the worker count; more than one worker gives up determinism.
    pub fn set_workers(&mut self, threads: usize) {
        self.worker_threads = threads.max(1);
        self.deterministic = self.worker_threads == 1;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
