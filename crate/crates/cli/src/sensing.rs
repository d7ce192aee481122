//! The `sensing.json` sidecar describing how measurements were taken.

use std::path::{Path, PathBuf};

use phycosf_core::cassi::{CodedMask, DispersionModel, SensingOperator};
use phycosf_core::datasets::load_plane;
use serde::{Deserialize, Serialize};

use crate::exit::{io_error, CliError, CliResult};

pub const SENSING_FILE: &str = "sensing.json";
pub const MASK_DIR: &str = "mask";
pub const MEASUREMENT_DIR: &str = "measurements";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensing {
    pub sensed_wavelengths: Vec<f64>,
    pub dispersion: DispersionModel,
    /// Mask container, relative to the sidecar.
    pub mask: PathBuf,
    pub mask_seed: u64,
    pub mask_density: f64,
    pub noise_sigma: f64,
}

impl Sensing {
    pub fn save(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(SENSING_FILE);
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Operator from the sidecar at `path` and its mask container.
    pub fn operator(&self, path: &Path) -> CliResult<SensingOperator> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mask = CodedMask::from_values(load_plane(&base.join(&self.mask))?)?;
        Ok(SensingOperator::new(mask, self.dispersion, self.sensed_wavelengths.clone())?)
    }
}
