use std::path::Path;

use semloc::elements::Taxonomy;
use semloc::encoder::EncoderConfig;
use semloc::eval::EvalConfig;
use semloc::learning::LossConfig;
use semloc::mapping::ClusterConfig;
use semloc::pipeline::LocalizeConfig;
use semloc::synthetic::{FrameConfig, NoiseConfig, StereoConfig};
use semloc::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings for every subcommand. Missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub taxonomy: Taxonomy,
    pub frames: FrameConfig,
    pub stereo: StereoConfig,
    pub encoder: EncoderConfig,
    pub training: LossConfig,
    pub localize: LocalizeConfig,
    pub cluster: ClusterConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            taxonomy: Taxonomy::default(),
            frames: FrameConfig {
                noise: NoiseConfig { pixel_sigma: 1.0, dropout_rate: 0.2, outlier_rate_2d: 0.1, clutter_rate_3d: 0.1 },
                ..FrameConfig::default()
            },
            stereo: StereoConfig::default(),
            encoder: EncoderConfig::desk(),
            training: LossConfig::desk(),
            localize: LocalizeConfig::default(),
            cluster: ClusterConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = semloc::io::read_text(path)?;
        let cfg: Config =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frames.scene.validate()?;
        self.frames.noise.validate()?;
        self.encoder.validate()?;
        if self.encoder.num_classes != self.taxonomy.len() {
            return Err(Error::Config("encoder class count differs from the taxonomy".into()));
        }
        self.training.validate()?;
        self.localize.validate()?;
        self.cluster.validate()?;
        self.eval.validate()
    }
}
