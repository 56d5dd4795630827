//! Conditioning modes, latent layouts and checkpoints.

use std::path::Path;

use mangasfx_core::flow::codec::PatchCodec;
use mangasfx_core::flow::toy::{ToyConfig, ToyDenoiser};
use mangasfx_core::flow::{AdamState, Condition, LatentTensor, NoiseSchedule, TrainExample};
use mangasfx_core::incontext::{build_training_pair, concat_h, lift, normalize_slot, SampleImages};
use serde::{Deserialize, Serialize};

use crate::config::{Conditioning, PipelineConfig};
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_FORMAT: &str = "mangasfx-checkpoint/1";
const RGB: usize = 3;

/// Latent layout of one conditioning mode at a given canvas size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSpec {
    pub mode: Conditioning,
    pub canvas: usize,
    pub codec: PatchCodec,
}

impl ModeSpec {
    pub fn new(mode: Conditioning, canvas: usize, factor: usize) -> Result<Self> {
        Ok(Self {
            mode,
            canvas,
            codec: PatchCodec::new(factor)?,
        })
    }

    pub fn from_config(cfg: &PipelineConfig, mode: Conditioning) -> Result<Self> {
        Self::new(mode, cfg.dataset.canvas, cfg.model.codec_factor)
    }

    /// Shape of the generated latent.
    pub fn target_shape(&self) -> Result<(usize, usize, usize)> {
        let width = match self.mode {
            Conditioning::InContext => 2 * self.canvas,
            Conditioning::Plain => self.canvas,
        };
        Ok(self.codec.latent_shape(width, self.canvas, RGB)?)
    }

    pub fn cond_channels(&self) -> Result<usize> {
        let (c, _, _) = self.codec.latent_shape(self.canvas, self.canvas, RGB)?;
        Ok(match self.mode {
            Conditioning::InContext => c,
            Conditioning::Plain => 2 * c,
        })
    }

    pub fn toy_config(&self, cfg: &PipelineConfig) -> Result<ToyConfig> {
        let (latent_channels, _, _) = self.target_shape()?;
        // the plain mode is the ablation without adapters
        let (rank, train_base) = match self.mode {
            Conditioning::InContext => (cfg.model.rank, cfg.model.train_base),
            Conditioning::Plain => (0, true),
        };
        let toy = ToyConfig {
            latent_channels,
            cond_channels: self.cond_channels()?,
            hidden: cfg.model.hidden,
            rank,
            lora_scale: cfg.model.lora_scale,
            train_base,
            init_seed: cfg.seed.wrapping_mul(2).wrapping_add(self.mode as u64),
        };
        toy.validate()?;
        Ok(toy)
    }

    /// Condition latent: `concat_h(y_m, y)` encoded (in-context), or the
    /// channel stack of `y_m` and `y` (plain).
    pub fn condition(&self, sample: &SampleImages) -> Result<Condition> {
        let slot = |img| normalize_slot(img, self.canvas);
        let latent = match self.mode {
            Conditioning::InContext => {
                let canvas = concat_h(&slot(&sample.y_m)?, &slot(&sample.y)?)?;
                self.codec.encode(canvas.image())?
            }
            Conditioning::Plain => {
                let a = self.codec.encode(&slot(&sample.y_m)?)?;
                let b = self.codec.encode(&slot(&sample.y)?)?;
                LatentTensor::concat_channels(&[&a, &b])?
            }
        };
        Ok(Condition {
            latent,
            prompt: sample.prompt.clone(),
        })
    }

    pub fn example(&self, sample: &SampleImages) -> Result<TrainExample> {
        let target = match self.mode {
            Conditioning::InContext => {
                let pair = build_training_pair(sample, self.canvas)?;
                self.codec.encode(pair.target.image())?
            }
            Conditioning::Plain => {
                let m = if sample.x_m.width() == self.canvas && sample.x_m.height() == self.canvas {
                    sample.x_m.clone()
                } else {
                    mangasfx_core::raster::resize_mask(&sample.x_m, self.canvas, self.canvas)?
                };
                self.codec.encode(&lift(&m))?
            }
        };
        Ok(TrainExample {
            condition: self.condition(sample)?,
            target,
        })
    }
}

/// Everything needed to resume training or to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: String,
    pub mode: Conditioning,
    pub canvas: usize,
    pub codec_factor: usize,
    pub toy: ToyConfig,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub step: u64,
    pub config_digest: String,
    pub params: Vec<f64>,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = io::read_json(path)?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("format '{}' is not '{CHECKPOINT_FORMAT}'", ck.format_version),
            });
        }
        if ck.params.len() != ck.optimizer.num_params() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("{} parameters but optimizer state for {}", ck.params.len(), ck.optimizer.num_params()),
            });
        }
        Ok(ck)
    }

    pub fn spec(&self) -> Result<ModeSpec> {
        ModeSpec::new(self.mode, self.canvas, self.codec_factor)
    }

    pub fn denoiser(&self) -> Result<ToyDenoiser> {
        Ok(ToyDenoiser::from_params(self.toy.clone(), self.params.clone())?)
    }
}
