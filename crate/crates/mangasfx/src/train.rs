//! Training loop for the toy denoiser.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use mangasfx_core::dataset::Split;
use mangasfx_core::flow::toy::ToyDenoiser;
use mangasfx_core::flow::{apply_batch, draw_noise, example_loss_grad, sample, AdamState, TrainExample, TrainableBackend};
use mangasfx_core::incontext::SampleImages;
use mangasfx_core::raster::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Conditioning, PipelineConfig};
use crate::dataset::{load_manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::io;
use crate::model::{Checkpoint, ModeSpec, CHECKPOINT_FORMAT};

pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Stream of the per-step generator; keeps training and sampling draws apart.
const TRAIN_STREAM: u64 = 1;

/// Per-step generator: a pure function of `(seed, step)`, so a resumed run
/// draws exactly what an uninterrupted one would.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(TRAIN_STREAM);
    rng
}

pub fn train_dir(run_dir: &Path, mode: Conditioning) -> PathBuf {
    run_dir.join("train").join(mode.as_str())
}

/// Loads every sample of `split` from a manifest.
pub fn load_split(manifest: &Path, split: Split) -> Result<Vec<(SampleRecord, SampleImages)>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records: Vec<SampleRecord> = load_manifest(manifest)?.into_iter().filter(|r| r.split == split).collect();
    records
        .into_par_iter()
        .map(|r| {
            let imgs = r.load(base)?;
            Ok((r, imgs))
        })
        .collect()
}

pub fn fresh_checkpoint(cfg: &PipelineConfig, spec: &ModeSpec) -> Result<Checkpoint> {
    let toy = spec.toy_config(cfg)?;
    let model = ToyDenoiser::new(toy.clone())?;
    let mut optimizer = AdamState::new(model.params().len(), cfg.train.learning_rate);
    optimizer.max_grad_norm = cfg.train.max_grad_norm;
    Ok(Checkpoint {
        format_version: CHECKPOINT_FORMAT.to_string(),
        mode: spec.mode,
        canvas: spec.canvas,
        codec_factor: spec.codec.factor(),
        toy,
        schedule: cfg.schedule.clone(),
        seed: cfg.seed,
        step: 0,
        config_digest: cfg.digest(),
        params: model.params().to_vec(),
        optimizer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub step: u64,
    /// `(step, loss)` for the steps run in this call.
    pub losses: Vec<(u64, f64)>,
}

/// Rows: [condition | sample | target] decoded to images, one row per sample.
fn validation_grid(model: &ToyDenoiser, spec: &ModeSpec, ck: &Checkpoint, samples: &[&SampleImages]) -> Result<RasterImage> {
    let rows: Vec<Vec<RasterImage>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let ex = spec.example(s)?;
            let shape = spec.target_shape()?;
            let z = sample(model, &ex.condition, shape, &ck.schedule, ck.seed.wrapping_add(i as u64))?;
            let generated = spec.codec.decode(&z, 3)?;
            let target = spec.codec.decode(&ex.target, 3)?;
            let cond = match spec.mode {
                Conditioning::InContext => spec.codec.decode(&ex.condition.latent, 3)?,
                Conditioning::Plain => s.y.clone(),
            };
            Ok(vec![cond, generated, target])
        })
        .collect::<Result<_>>()?;
    let cell_w: usize = rows[0].iter().map(|c| c.width()).sum();
    let cell_h = rows[0][0].height();
    let mut grid = RasterImage::filled(cell_w, cell_h * rows.len(), 3, 255)?;
    for (r, row) in rows.iter().enumerate() {
        let mut x0 = 0;
        for img in row {
            let img = img.to_rgb();
            for y in 0..img.height().min(cell_h) {
                for x in 0..img.width() {
                    grid.pixel_mut(x0 + x, r * cell_h + y).copy_from_slice(img.pixel(x, y));
                }
            }
            x0 += img.width();
        }
    }
    Ok(grid)
}

/// Trains one conditioning mode up to `cfg.train.steps` total steps,
/// resuming from `resume` when given. Writes the checkpoint, appends to the
/// loss CSV and saves validation grids under `out_dir`.
pub fn train(
    cfg: &PipelineConfig,
    mode: Conditioning,
    manifest: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    events: &EventLog,
) -> Result<TrainOutcome> {
    if cfg.backends.denoiser != "reference" {
        return Err(Error::Config(format!(
            "denoiser '{}' cannot be trained here; only the reference toy backend supports training",
            cfg.backends.denoiser
        )));
    }
    let spec = ModeSpec::from_config(cfg, mode)?;
    let mut ck = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.mode != mode || ck.canvas != spec.canvas {
                return Err(Error::Checkpoint {
                    path: p.to_path_buf(),
                    message: format!("checkpoint is {} at canvas {}, run wants {} at {}", ck.mode.as_str(), ck.canvas, mode.as_str(), spec.canvas),
                });
            }
            ck
        }
        None => fresh_checkpoint(cfg, &spec)?,
    };
    let data = load_split(manifest, Split::Train)?;
    if data.is_empty() {
        return Err(Error::Config(format!("{} has no training samples", manifest.display())));
    }
    let images: Vec<&SampleImages> = data.iter().map(|(_, s)| s).collect();
    let mut model = ck.denoiser()?;
    let loss_path = out_dir.join(LOSS_FILE);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut loss_csv = if resume.is_some() && loss_path.exists() {
        OpenOptions::new().append(true).open(&loss_path)
    } else {
        std::fs::File::create(&loss_path).and_then(|mut f| writeln!(f, "step,loss").map(|_| f))
    }
    .map_err(|e| Error::io(&loss_path, e))?;
    events.emit(
        "train",
        "start",
        json!({"mode": mode.as_str(), "from_step": ck.step, "to_step": cfg.train.steps, "samples": images.len(), "params": model.params().len()}),
    );
    let val: Vec<&SampleImages> = images.iter().take(cfg.train.validation_samples).copied().collect();
    let mut losses = Vec::new();
    while ck.step < cfg.train.steps {
        let step = ck.step;
        let mut rng = step_rng(ck.seed, step);
        let batch: Vec<TrainExample> = (0..cfg.train.batch_size)
            .map(|_| rng.random_range(0..images.len()))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|i| spec.example(images[i]))
            .collect::<std::result::Result<_, _>>()?;
        let noised = draw_noise(&batch, &ck.schedule, &mut rng)?;
        let times: Vec<f64> = noised.iter().map(|n| n.t).collect();
        let per_example = batch
            .par_iter()
            .zip(noised.par_iter())
            .map(|(ex, nz)| example_loss_grad(&model, ex, nz))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let outcome = match apply_batch(&mut model, &mut ck.optimizer, per_example, times, step) {
            Ok(o) => o,
            Err(e) => {
                events.emit("train", "non_finite", json!({"mode": mode.as_str(), "step": step, "error": e.to_string()}));
                return Err(e.into());
            }
        };
        ck.step += 1;
        losses.push((step, outcome.loss));
        writeln!(loss_csv, "{step},{}", outcome.loss).map_err(|e| Error::io(&loss_path, e))?;
        if cfg.train.log_every > 0 && (step % cfg.train.log_every == 0 || ck.step == cfg.train.steps) {
            events.emit("train", "step", json!({"mode": mode.as_str(), "step": step, "loss": outcome.loss}));
            log::info!("{} step {step}: loss {:.5}", mode.as_str(), outcome.loss);
        }
        if cfg.train.validate_every > 0 && ck.step % cfg.train.validate_every == 0 && !val.is_empty() {
            ck.params = model.params().to_vec();
            let grid = validation_grid(&model, &spec, &ck, &val)?;
            let p = out_dir.join("val").join(format!("step_{:06}.png", ck.step));
            io::save_image(&p, &grid)?;
        }
    }
    ck.params = model.params().to_vec();
    let path = out_dir.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    events.emit("train", "done", json!({"mode": mode.as_str(), "step": ck.step, "checkpoint": path}));
    Ok(TrainOutcome {
        checkpoint: path,
        step: ck.step,
        losses,
    })
}

/// Mean loss of the first and last `window` entries.
pub fn smoothed_ends(losses: &[(u64, f64)], window: usize) -> Option<(f64, f64)> {
    if losses.len() < 2 * window || window == 0 {
        return None;
    }
    let mean = |s: &[(u64, f64)]| s.iter().map(|l| l.1).sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..window]), mean(&losses[losses.len() - window..])))
}
