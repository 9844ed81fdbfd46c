pub mod ablate;
pub mod eval;
pub mod gradcheck;
pub mod preview;
pub mod train;

use hnpm_core::config::{preset_config, Preset, TrainConfig};
use hnpm_core::{Error, Result};
use std::path::{Path, PathBuf};

/// Resolve the run configuration: a config file, a named preset, or the
/// desk default; then apply the seed override.
pub fn resolve_config(
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match (config, preset) {
        (Some(path), None) => TrainConfig::load(path)?,
        (None, preset) => {
            let preset: Preset = preset.unwrap_or("desk").parse()?;
            preset_config(preset)
        }
        (Some(_), Some(_)) => {
            return Err(Error::config("--config and --preset are mutually exclusive"))
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Artifact paths inside one run directory.
pub struct RunPaths {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> RunPaths {
        RunPaths {
            dir: dir.to_path_buf(),
            config: dir.join("config.toml"),
            metrics: dir.join("metrics.jsonl"),
            checkpoint: dir.join("checkpoint.hnpm"),
            manifest: dir.join("manifest.json"),
        }
    }
}
