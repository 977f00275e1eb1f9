use std::path::PathBuf;

use glimpse_core::attention::{AttentionDims, TrainConfig};
use glimpse_core::completion::{CompletionParams, RankDeficiency};
use glimpse_core::posterior::AvpTrainConfig;
use glimpse_core::{GlimpseLocation, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Whole-pipeline configuration, one JSON document.
///
/// `world.seed` fixes the world itself; the top-level `seed` drives dataset sampling,
/// training and annotation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub avp: AvpTrainConfig,
    pub pca: PcaConfig,
    pub boed: BoedConfig,
    pub attention: AttentionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Images behind the retrieval completer.
    pub bank: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 400,
            test: 400,
            bank: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub latent: usize,
    pub flip: bool,
    pub rank: RankDeficiency,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            latent: 32,
            flip: false,
            rank: RankDeficiency::Keep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoedConfig {
    pub steps: usize,
    pub samples: usize,
    /// Training images to annotate (the first `count` of the split).
    pub count: usize,
    pub completion: CompletionParams,
    pub h1: f64,
    pub h5: f64,
    /// Fixed sequence for the handcrafted baseline, as `[gx, gy]` pairs.
    pub handcrafted: Option<Vec<[usize; 2]>>,
}

impl Default for BoedConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            samples: 200,
            count: 400,
            completion: CompletionParams::default(),
            h1: 1.0,
            h5: 5.0,
            handcrafted: None,
        }
    }
}

impl BoedConfig {
    pub fn handcrafted_locations(&self) -> Option<Vec<GlimpseLocation>> {
        self.handcrafted
            .as_ref()
            .map(|v| v.iter().map(|&[gx, gy]| GlimpseLocation::new(gx, gy)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub embed: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    /// Sampled episodes per test image in `eval`.
    pub eval_episodes: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        let d = AttentionDims::default();
        Self {
            embed: d.embed,
            hidden: d.hidden,
            train: TrainConfig::default(),
            eval_episodes: 4,
        }
    }
}

impl AttentionConfig {
    pub fn dims(&self, classes: usize) -> AttentionDims {
        AttentionDims {
            classes,
            embed: self.embed,
            hidden: self.hidden,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.attention.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.boed.completion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let d = &self.data;
        if d.train == 0 || d.val == 0 || d.test == 0 || d.bank == 0 {
            return Err(CliError::Config("every data split needs at least one image".into()));
        }
        if self.boed.count > d.train {
            return Err(CliError::Config("boed.count exceeds the training split".into()));
        }
        if self.boed.steps != self.attention.train.steps {
            return Err(CliError::Config("boed.steps and attention.train.steps must agree".into()));
        }
        if self.pca.latent == 0 || self.pca.latent > d.bank {
            return Err(CliError::Config("pca.latent must lie in 1..=data.bank".into()));
        }
        if !(self.boed.h1 > 0.0 && self.boed.h5 > 0.0) {
            return Err(CliError::Config("inverse temperatures must be positive".into()));
        }
        if self.attention.eval_episodes == 0 {
            return Err(CliError::Config("attention.eval_episodes must be positive".into()));
        }
        Ok(())
    }
}
