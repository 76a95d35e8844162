//! Shared run configuration (TOML), threshold presets and output provenance.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use deduce_core::fusion::{THRESHOLD_PLACES, THRESHOLD_SUN};
use deduce_core::types::Provenance;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdPreset {
    /// 0.5
    Places,
    /// 0.6
    Sun,
}

impl ThresholdPreset {
    pub fn value(self) -> f64 {
        match self {
            ThresholdPreset::Places => THRESHOLD_PLACES,
            ThresholdPreset::Sun => THRESHOLD_SUN,
        }
    }
}

/// Values read from `--config`. Command-line flags win over these.
/// Relative paths are taken relative to the config file.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Built-in class set name; manifests must declare exactly this set.
    pub class_set: Option<String>,
    pub heads: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub threshold_preset: Option<ThresholdPreset>,
    pub min_conf: Option<f64>,
    pub resolution: Option<f64>,
    pub stamp_radius: Option<f64>,
    pub window: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Usage(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.heads, &mut cfg.codebook].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Explicit value, then preset flag, then config value, then config preset, then `places`.
    pub fn threshold(&self, value: Option<f64>, preset: Option<ThresholdPreset>) -> Result<f64> {
        let t = value
            .or(preset.map(ThresholdPreset::value))
            .or(self.threshold)
            .or(self.threshold_preset.map(ThresholdPreset::value))
            .unwrap_or(THRESHOLD_PLACES);
        if !(0.0..=1.0).contains(&t) {
            return Err(Usage(format!("threshold {t} outside [0, 1]")).into());
        }
        Ok(t)
    }
}

/// Digest of everything that determines an output's bytes: resolved settings
/// and the contents of every input file. Output paths are left out, so the
/// same run written elsewhere carries the same hash.
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new(command: &str) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        Fingerprint(h)
    }

    pub fn field(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.update(format!("{key}={value}\n").as_bytes());
        self
    }

    pub fn bytes(&mut self, key: &str, data: &[u8]) -> &mut Self {
        let digest = hex(&Sha256::digest(data));
        self.field(key, digest)
    }

    pub fn file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let data = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(self.bytes(key, &data))
    }

    pub fn provenance(&self, seed: Option<u64>) -> Provenance {
        let digest = self.0.clone().finalize();
        Provenance::new(seed, hex(&digest[..8]))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
