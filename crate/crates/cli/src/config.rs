//! Optional TOML configuration. Command-line flags take precedence over file values.
//!
//! ```toml
//! seed = 0
//! deterministic = true
//! output = "out"
//! log_level = "info"
//!
//! [lm]
//! max_iterations = 200
//!
//! [align]
//! anchor = "lidar"
//! tolerance = 0.05
//! stride = 5
//!
//! [polarization]
//! epsilon = 1e-6
//!
//! [voxelize]
//! cap = 10
//! ```

use std::path::{Path, PathBuf};

use panosense::dataio::Modality;
use panosense::LmConfig;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub output: Option<PathBuf>,
    pub log_level: Option<String>,
    pub lm: Option<LmConfig>,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub polarization: PolarizationConfig,
    #[serde(default)]
    pub voxelize: VoxelizeConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub anchor: Option<Modality>,
    pub tolerance: Option<f64>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationConfig {
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelizeConfig {
    pub cap: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}
