//! Run configuration file (TOML) with one table per component.
//!
//! ```toml
//! [synth]
//! radius = 10
//! [model]
//! stages = 4
//! radii = [1, 2, 4]
//! [train]
//! steps = 500
//! [eval]
//! mi_bins = 16
//! ```
//! Every table and field is optional and falls back to its default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};
use crate::metrics::EvalConfig;
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HexstConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl HexstConfig {
    pub fn from_toml(text: &str) -> std::result::Result<HexstConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<HexstConfig> {
        let text = fs::read_to_string(path).map_err(|e| HexstError::io(path, e))?;
        HexstConfig::from_toml(&text).map_err(|m| HexstError::format(path, m))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
