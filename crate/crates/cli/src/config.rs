//! Effective configuration: an optional JSON or TOML file plus flag overrides.

use std::path::Path;

use qemb_core::angles::AxesConfig;
use qemb_core::distill::MlpConfig;
use qemb_core::embed::PipelineConfig;
use qemb_core::fusion::FusionConfig;
use qemb_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub axes: AxesConfig,
    pub fusion: FusionConfig,
    pub mlp: MlpConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        };
        cfg.pipeline.validate()?;
        cfg.fusion.validate()?;
        Ok(cfg)
    }
}
