//! Inference for the three variants: sample, split or decode, convert and
//! composite.

use std::path::{Path, PathBuf};

use mangasfx_core::composite::{compose_final, InpainterBackend, Placement};
use mangasfx_core::flow::{sample, DenoiserBackend, NoiseSchedule};
use mangasfx_core::incontext::{split_h, unlift, ConcatCanvas, SampleImages};
use mangasfx_core::raster::{BinaryMask, PolygonRegion, RasterImage};
use mangasfx_core::rgba::{convert, ConverterBackend, RgbaLayer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backends::{self, is_uri, HttpAdapter, HttpDenoiser};
use crate::config::{PipelineConfig, Variant};
use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::io;
use crate::model::{Checkpoint, ModeSpec};
use crate::train::load_split;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const LAYERS_DIR: &str = "layers";
pub const SUMMARY_FILE: &str = "generation.json";

pub type Denoiser = Box<dyn DenoiserBackend + Send + Sync>;

/// Final image of a sample inside a variant's output directory.
pub fn image_path(out_dir: &Path, sample_id: &str) -> PathBuf {
    out_dir.join(IMAGES_DIR).join(format!("{sample_id}.png"))
}

/// Sampling seed of one sample: independent of the order samples are visited.
pub fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    let h = Sha256::digest(sample_id.as_bytes());
    seed ^ u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// A loaded denoiser together with its latent layout and sampling schedule.
pub struct LoadedModel {
    pub spec: ModeSpec,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
}

/// Resolves the configured denoiser for `variant`. The reference backend
/// needs a checkpoint trained in the variant's conditioning mode.
pub fn load_model(cfg: &PipelineConfig, variant: Variant, checkpoint: Option<&Path>) -> Result<LoadedModel> {
    let mode = variant.mode();
    match cfg.backends.denoiser.as_str() {
        "reference" => {
            let path = checkpoint.ok_or_else(|| Error::Config(format!("variant {variant} needs a checkpoint for the reference denoiser")))?;
            let ck = Checkpoint::load(path)?;
            if ck.mode != mode {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: format!("trained for {} conditioning, variant {variant} needs {}", ck.mode.as_str(), mode.as_str()),
                });
            }
            let mut schedule = ck.schedule.clone();
            schedule.sampler_steps = cfg.schedule.sampler_steps;
            Ok(LoadedModel {
                spec: ck.spec()?,
                schedule,
                denoiser: Box::new(ck.denoiser()?),
            })
        }
        s if is_uri(s) => {
            let spec = ModeSpec::from_config(cfg, mode)?;
            Ok(LoadedModel {
                spec,
                schedule: cfg.schedule.clone(),
                denoiser: Box::new(HttpDenoiser {
                    http: HttpAdapter::new(s),
                    codec: spec.codec,
                }),
            })
        }
        s => Err(Error::Config(format!("unknown denoiser backend '{s}' (expected 'reference' or an http(s) URI)"))),
    }
}

/// Everything produced for one sample.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: RasterImage,
    /// Binarized mask half (or the whole decoded image without in-context conditioning).
    pub mask: BinaryMask,
    /// Absent for the crop variant, which skips conversion.
    pub layer: Option<RgbaLayer>,
    pub warnings: Vec<String>,
}

pub struct Stage2<'a> {
    pub converter: &'a (dyn ConverterBackend + Sync),
    pub inpainter: &'a (dyn InpainterBackend + Sync),
    pub converter_prompt: &'a str,
    pub support_tolerance: usize,
    pub threshold: u8,
    pub placement: Placement,
}

fn convert_and_compose(mask: BinaryMask, context: &RasterImage, polygon: &PolygonRegion, stage2: &Stage2) -> Result<SampleOutput> {
    let mut warnings = Vec::new();
    let layer = if mask.is_empty() {
        warnings.push("generated mask is empty; compositing a transparent layer".to_string());
        RgbaLayer::transparent(mask.width(), mask.height())?
    } else {
        let c = convert(&mask, stage2.converter_prompt, stage2.converter, stage2.support_tolerance)?;
        warnings.extend(c.warnings);
        c.layer
    };
    let composite = compose_final(context, polygon, &layer, stage2.inpainter, stage2.placement)?;
    Ok(SampleOutput {
        image: composite.image,
        mask,
        layer: Some(layer),
        warnings,
    })
}

/// Runs one sample through `variant`.
pub fn generate_sample(
    variant: Variant,
    model: &LoadedModel,
    images: &SampleImages,
    polygon: &PolygonRegion,
    stage2: &Stage2,
    seed: u64,
) -> Result<SampleOutput> {
    let spec = &model.spec;
    let condition = spec.condition(images)?;
    let z = sample(model.denoiser.as_ref(), &condition, spec.target_shape()?, &model.schedule, seed)?;
    let decoded = spec.codec.decode(&z, 3)?;
    match variant {
        Variant::Full => {
            let (left, _) = split_h(&ConcatCanvas::from_parts(decoded, spec.canvas)?)?;
            convert_and_compose(unlift(&left, stage2.threshold)?, &images.y, polygon, stage2)
        }
        Variant::NoIncontext => convert_and_compose(unlift(&decoded, stage2.threshold)?, &images.y, polygon, stage2),
        Variant::MaskKontextCrop => {
            let (left, right) = split_h(&ConcatCanvas::from_parts(decoded, spec.canvas)?)?;
            Ok(SampleOutput {
                image: right,
                mask: unlift(&left, stage2.threshold)?,
                layer: None,
                warnings: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub variant: String,
    pub split: String,
    pub total: usize,
    pub written: usize,
    /// `(sample_id, error)`
    pub failed: Vec<(String, String)>,
    /// `(sample_id, warning)`
    pub warnings: Vec<(String, String)>,
}

/// Generates every sample of `cfg.generate.split` into `out_dir` and writes
/// the summary. In strict mode any failed sample turns into an error after
/// the rest have been written.
pub fn generate(
    cfg: &PipelineConfig,
    variant: Variant,
    model: &LoadedModel,
    manifest: &Path,
    out_dir: &Path,
    events: &EventLog,
) -> Result<GenerateSummary> {
    let split = cfg.generate.split;
    let data: Vec<(SampleRecord, SampleImages)> = load_split(manifest, split)?;
    let converter = backends::converter(cfg)?;
    let inpainter = backends::inpainter(cfg)?;
    let stage2 = Stage2 {
        converter: converter.as_ref(),
        inpainter: inpainter.as_ref(),
        converter_prompt: &cfg.generate.converter_prompt,
        support_tolerance: cfg.generate.support_tolerance,
        threshold: cfg.generate.threshold,
        placement: cfg.generate.placement,
    };
    events.emit("generate", "start", json!({"variant": variant.as_str(), "split": split.as_str(), "samples": data.len()}));
    let results: Vec<(String, Result<Vec<String>>)> = data
        .par_iter()
        .map(|(rec, imgs)| {
            let id = rec.sample_id.clone();
            let out = generate_sample(variant, model, imgs, &rec.polygon, &stage2, sample_seed(cfg.seed, &id)).and_then(|o| {
                io::save_image(&image_path(out_dir, &id), &o.image)?;
                io::save_mask(&out_dir.join(MASKS_DIR).join(format!("{id}.png")), &o.mask)?;
                if let Some(layer) = &o.layer {
                    io::save_image(&out_dir.join(LAYERS_DIR).join(format!("{id}.png")), layer.image())?;
                }
                Ok(o.warnings)
            });
            (id, out)
        })
        .collect();
    let mut summary = GenerateSummary {
        variant: variant.as_str().to_string(),
        split: split.as_str().to_string(),
        total: results.len(),
        ..Default::default()
    };
    for (id, r) in results {
        match r {
            Ok(ws) => {
                summary.written += 1;
                summary.warnings.extend(ws.into_iter().map(|w| (id.clone(), w)));
            }
            Err(e) => {
                log::error!("sample {id}: {e}");
                events.emit("generate", "sample_failed", json!({"variant": variant.as_str(), "sample_id": id, "error": e.to_string()}));
                summary.failed.push((id, e.to_string()));
            }
        }
    }
    io::write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    events.emit(
        "generate",
        "done",
        json!({"variant": variant.as_str(), "written": summary.written, "failed": summary.failed.len(), "warnings": summary.warnings.len()}),
    );
    if !summary.failed.is_empty() {
        log::warn!("{} of {} sample(s) failed", summary.failed.len(), summary.total);
        if cfg.generate.strict {
            return Err(Error::Generation {
                failed: summary.failed.len(),
                total: summary.total,
            });
        }
    }
    Ok(summary)
}

