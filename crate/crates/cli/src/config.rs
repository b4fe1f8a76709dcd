//! Layered settings: built-in defaults, then the TOML file, then SM_
//! variables and flags (resolved by clap).

use std::path::Path;

use gaitstyle::model::TrainConfig;
use gaitstyle::motion::BvhOptions;
use gaitstyle::phase::PhaseConfig;
use gaitstyle::runtime::ControllerConfig;
use gaitstyle::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvhSection {
    pub unit_scale: f64,
    pub target_fps: f64,
}

impl Default for BvhSection {
    fn default() -> Self {
        let d = BvhOptions::default();
        BvhSection {
            unit_scale: d.unit_scale,
            target_fps: d.target_fps,
        }
    }
}

impl BvhSection {
    pub fn options(&self) -> BvhOptions {
        BvhOptions {
            unit_scale: self.unit_scale,
            target_fps: self.target_fps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSection {
    /// Frames between style windows averaged into an embedding.
    pub stride: usize,
}

impl Default for StyleSection {
    fn default() -> Self {
        StyleSection { stride: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub bvh: BvhSection,
    pub phase: PhaseConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub style: StyleSection,
    pub controller: ControllerConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            bvh: BvhSection::default(),
            phase: PhaseConfig::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig {
                dropout: 0.0,
                ..TrainConfig::default()
            },
            style: StyleSection::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Settings> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: format!("{}: {}", path.display(), e.message()),
        })
    }
}
