//! Run configuration: a TOML file of optional keys over built-in defaults.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dendron::data_io::{LabelRule, WindowingConfig};
use dendron::online_learning::HeadTrainConfig;
use dendron::tensor_nn::{ConvBlockSpec, FeatureExtractorSpec};
use dendron::training::{AlphaMode, TrainConfig};

pub const SEED_ENV: &str = "DENDRON_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `predicted` or `teacher-forced`.
    pub alpha_mode: String,
    pub shuffle: bool,
    pub freeze_feature_extractor: bool,
    pub window_seconds: f64,
    pub overlap: f64,
    /// `majority` or `strict-uniform`.
    pub label_rule: String,
    /// `[kernel_size, num_filters, pool_size]` per convolution block.
    pub blocks: Vec<[usize; 3]>,
    /// Hidden dense widths of every head; the class layer is appended.
    pub hidden: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 50,
            learning_rate: 0.01,
            alpha_mode: "predicted".into(),
            shuffle: true,
            freeze_feature_extractor: false,
            window_seconds: 2.0,
            overlap: 0.5,
            label_rule: "majority".into(),
            blocks: vec![[5, 8, 2], [3, 8, 2]],
            hidden: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then the seed from the environment.
    /// Returns the config and the override note to print, if one applied.
    pub fn resolve(path: Option<&Path>) -> anyhow::Result<(Self, Option<String>)> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| crate::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        let mut note = None;
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| crate::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
            note = Some(format!("seed {seed} from {SEED_ENV} (config had {})", cfg.seed));
            cfg.seed = seed;
        }
        cfg.check()?;
        Ok((cfg, note))
    }

    fn check(&self) -> anyhow::Result<()> {
        self.alpha_mode()?;
        self.label_rule()?;
        if !(0.0..1.0).contains(&self.overlap) {
            bail!(crate::Usage(format!("overlap must lie in [0, 1), got {}", self.overlap)));
        }
        Ok(())
    }

    pub fn alpha_mode(&self) -> anyhow::Result<AlphaMode> {
        self.alpha_mode
            .parse()
            .map_err(|e: dendron::Error| crate::Usage(e.to_string()).into())
    }

    pub fn label_rule(&self) -> anyhow::Result<LabelRule> {
        self.label_rule
            .parse()
            .map_err(|e: dendron::Error| crate::Usage(e.to_string()).into())
    }

    pub fn windowing(&self) -> anyhow::Result<WindowingConfig> {
        Ok(WindowingConfig {
            window_seconds: self.window_seconds,
            overlap_fraction: self.overlap,
            label_rule: self.label_rule()?,
        })
    }

    pub fn fe_spec(&self, channels: usize, window_len: usize) -> FeatureExtractorSpec {
        FeatureExtractorSpec {
            input_channels: channels,
            window_len,
            blocks: self
                .blocks
                .iter()
                .map(|&[kernel_size, num_filters, pool_size]| ConvBlockSpec {
                    kernel_size,
                    num_filters,
                    pool_size,
                })
                .collect(),
        }
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate as f32,
            seed: self.seed,
            alpha_mode: self.alpha_mode()?,
            shuffle: self.shuffle,
            freeze_feature_extractor: self.freeze_feature_extractor,
        })
    }

    pub fn head_train(&self) -> HeadTrainConfig {
        HeadTrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate as f32,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
