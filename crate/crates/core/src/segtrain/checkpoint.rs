use std::path::{Path, PathBuf};

use super::classifier::PixelClassifier;
use super::train::TrainConfig;
use crate::error::{PsadError, Result};

/// `<ckpt>.json`, holding the training configuration.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(clf: &PixelClassifier, cfg: &TrainConfig, path: &Path) -> Result<()> {
    clf.save(path)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(cfg).map_err(|e| PsadError::json(&side, e))?;
    std::fs::write(&side, json).map_err(|e| PsadError::io(&side, e))
}

/// Loads a checkpoint; the sidecar is optional.
pub fn load_checkpoint(path: &Path) -> Result<(PixelClassifier, Option<TrainConfig>)> {
    let clf = PixelClassifier::load(path)?;
    let side = sidecar_path(path);
    let cfg = match std::fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| PsadError::json(&side, e))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(PsadError::io(&side, e)),
    };
    Ok((clf, cfg))
}
