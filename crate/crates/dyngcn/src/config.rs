//! Declarative run configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use dyngcn_core::graph::SkeletonLayout;
use dyngcn_core::model::ModelConfig;
use dyngcn_core::optim::SgdConfig;
use dyngcn_core::train::TrainSettings;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
    /// Layout file used instead of the built-in named by `model.layout`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainSettings,
    #[serde(default)]
    pub data: DataPaths,
}

pub const PRESETS: [&str; 4] = ["ntu-like", "kinetics-like", "smoke", "toy"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let train = match name {
            "smoke" | "toy" => TrainSettings {
                sgd: SgdConfig { lr: 0.05, ..SgdConfig::default() },
                batch_size: 4,
                epochs: 3,
                milestones: vec![],
                ..TrainSettings::default()
            },
            _ => TrainSettings::default(),
        };
        Ok(Self { output_dir: PathBuf::from(format!("runs/{name}")), model, train, data: DataPaths::default() })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let loc = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "document".into());
            Error::parse(path, loc, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn layout(&self) -> Result<SkeletonLayout> {
        resolve_layout(&self.model.layout, self.data.layout_file.as_deref())
    }
}

/// A layout file if given, else the built-in of that name.
pub fn resolve_layout(name: &str, file: Option<&Path>) -> Result<SkeletonLayout> {
    match file {
        Some(p) => load_layout(p),
        None => Ok(SkeletonLayout::builtin(name)?),
    }
}

pub fn load_layout(path: &Path) -> Result<SkeletonLayout> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SkeletonLayout::parse(&text).map_err(|e| Error::parse(path, "layout", e.to_string()))
}
