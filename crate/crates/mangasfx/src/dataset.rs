//! Dataset builder: filtering, splitting, per-sample images and the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mangasfx_core::dataset::{build_context_image, build_prompt, extract_gt, passes_min_size, render_plain_text, CaptionerBackend, Split, SplitTable};
use mangasfx_core::incontext::SampleImages;
use mangasfx_core::raster::{BinaryMask, PolygonRegion, RasterImage};
use mangasfx_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::DatasetConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::sources::AnnotationRecord;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line. Image paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    pub y_m: PathBuf,
    pub y: PathBuf,
    pub x_m: PathBuf,
    pub x: PathBuf,
    pub prompt: String,
    /// Canvas coordinates.
    pub polygon: PolygonRegion,
    pub text: String,
}

impl SampleRecord {
    /// Loads the four images and checks that they share one square canvas.
    pub fn load(&self, base: &Path) -> Result<SampleImages> {
        let inner = || -> Result<SampleImages> {
            let y_m = io::load_image(&base.join(&self.y_m))?.to_rgb();
            let y = io::load_image(&base.join(&self.y))?.to_rgb();
            let x_m = io::load_mask(&base.join(&self.x_m))?;
            let x = io::load_image(&base.join(&self.x))?.to_rgb();
            let dims = (y.width(), y.height());
            for (name, d) in [("y_m", (y_m.width(), y_m.height())), ("x_m", (x_m.width(), x_m.height())), ("x", (x.width(), x.height()))] {
                if d != dims {
                    return Err(Error::Config(format!("{name} is {}x{}, y is {}x{}", d.0, d.1, dims.0, dims.1)));
                }
            }
            Ok(SampleImages {
                sample_id: self.sample_id.clone(),
                y_m,
                y,
                x_m,
                x,
                prompt: self.prompt.clone(),
            })
        };
        inner().map_err(|e| e.for_sample(&self.sample_id))
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = io::read_jsonl(path)?;
    for r in &records {
        r.polygon.validate().map_err(|e| Error::from(e).for_sample(&r.sample_id))?;
    }
    Ok(records)
}

/// Keeps records whose page passes the size rule. Page sizes are read from
/// the PNG headers, once per page.
pub fn filter_min_size(records: Vec<AnnotationRecord>, min: usize, strict: bool) -> Result<(Vec<AnnotationRecord>, usize)> {
    let mut dims: BTreeMap<PathBuf, (usize, usize)> = BTreeMap::new();
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        let (w, h) = match dims.get(&r.page_image) {
            Some(d) => *d,
            None => {
                let d = io::image_dimensions(&r.page_image)?;
                dims.insert(r.page_image.clone(), d);
                d
            }
        };
        if passes_min_size(w, h, min, strict) {
            kept.push(r);
        } else {
            dropped += 1;
        }
    }
    Ok((kept, dropped))
}

pub fn split_by_title(records: Vec<AnnotationRecord>, table: &SplitTable) -> Result<Vec<(AnnotationRecord, Split)>> {
    records
        .into_iter()
        .map(|r| {
            let s = table.split_of(&r.title).map_err(Error::from)?;
            Ok((r, s))
        })
        .collect()
}

/// `<page_id>-<k>` with path separators replaced; `k` counts instances on the page.
pub fn sample_id(page_id: &str, k: usize) -> String {
    let safe: String = page_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-{k}")
}

/// In-memory images of one built sample.
#[derive(Debug, Clone)]
pub struct BuiltSample {
    pub record: SampleRecord,
    pub y_m: RasterImage,
    pub y: RasterImage,
    pub x_m: BinaryMask,
    pub x: RasterImage,
}

pub fn build_sample(
    record: &AnnotationRecord,
    split: Split,
    id: &str,
    cfg: &DatasetConfig,
    captioner: &(dyn CaptionerBackend + Sync),
) -> Result<BuiltSample> {
    let page = io::load_image(&record.page_image)?;
    let mask = io::load_mask(&record.mask_image)?;
    if (mask.width(), mask.height()) != (page.width(), page.height()) {
        return Err(CoreError::Shape {
            left: page.describe(),
            right: format!("mask {}x{}", mask.width(), mask.height()),
        }
        .into());
    }
    let canvas = build_context_image(&page, &record.polygon, cfg.canvas, cfg.expansion)?;
    let x_m = extract_gt(&mask, &canvas.window)?;
    let y_m = render_plain_text(&record.text, &canvas.polygon, cfg.canvas, cfg.canvas)?;
    let prompt = build_prompt(&canvas.context, captioner, &cfg.prompt_template);
    let dir = PathBuf::from("samples").join(id);
    Ok(BuiltSample {
        record: SampleRecord {
            sample_id: id.to_string(),
            split,
            y_m: dir.join("y_m.png"),
            y: dir.join("y.png"),
            x_m: dir.join("x_m.png"),
            x: dir.join("x.png"),
            prompt: prompt.rendered,
            polygon: canvas.polygon,
            text: record.text.clone(),
        },
        y_m,
        y: canvas.context,
        x_m,
        x: canvas.crop,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Distinct source pages per split.
    pub train_pages: usize,
    pub test_pages: usize,
    pub dropped_small: usize,
    /// Samples skipped because their ground truth was empty or their region degenerate.
    pub skipped: Vec<String>,
    pub manifest: PathBuf,
}

/// Builds every sample into `out_dir` and writes the manifest sorted by
/// `sample_id`.
pub fn build_dataset(
    records: Vec<AnnotationRecord>,
    table: &SplitTable,
    cfg: &DatasetConfig,
    captioner: &(dyn CaptionerBackend + Sync),
    out_dir: &Path,
) -> Result<BuildSummary> {
    table.validate()?;
    let (records, dropped_small) = filter_min_size(records, cfg.min_page_size, cfg.strict_min_size)?;
    let split = split_by_title(records, table)?;
    let mut per_page: BTreeMap<&str, usize> = BTreeMap::new();
    let jobs: Vec<(String, &AnnotationRecord, Split)> = split
        .iter()
        .map(|(r, s)| {
            let k = per_page.entry(&r.page_id).or_default();
            let id = sample_id(&r.page_id, *k);
            *k += 1;
            (id, r, *s)
        })
        .collect();
    let ids: BTreeSet<&str> = jobs.iter().map(|j| j.0.as_str()).collect();
    if ids.len() != jobs.len() {
        return Err(Error::Config("page ids collide after sanitizing into sample ids".into()));
    }
    let results: Vec<(String, Result<SampleRecord>)> = jobs
        .par_iter()
        .map(|(id, rec, s)| {
            let out = build_sample(rec, *s, id, cfg, captioner).and_then(|b| {
                io::save_image(&out_dir.join(&b.record.y_m), &b.y_m)?;
                io::save_image(&out_dir.join(&b.record.y), &b.y)?;
                io::save_mask(&out_dir.join(&b.record.x_m), &b.x_m)?;
                io::save_image(&out_dir.join(&b.record.x), &b.x)?;
                Ok(b.record)
            });
            (id.clone(), out)
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(s) => samples.push(s),
            Err(Error::Core(CoreError::EmptyMask | CoreError::DegenerateRegion(_))) => {
                log::info!("sample {id}: empty ground truth or degenerate region, skipped");
                skipped.push(id);
            }
            Err(e) => return Err(e.for_sample(&id)),
        }
    }
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let manifest = out_dir.join(MANIFEST_FILE);
    io::write_jsonl(&manifest, &samples)?;
    let mut pages: [BTreeSet<&str>; 2] = Default::default();
    for (id, rec, s) in &jobs {
        if samples.binary_search_by(|x| x.sample_id.as_str().cmp(id)).is_ok() {
            pages[(*s == Split::Test) as usize].insert(&rec.page_id);
        }
    }
    Ok(BuildSummary {
        train_samples: samples.iter().filter(|s| s.split == Split::Train).count(),
        test_samples: samples.iter().filter(|s| s.split == Split::Test).count(),
        train_pages: pages[0].len(),
        test_pages: pages[1].len(),
        dropped_small,
        skipped,
        manifest,
    })
}

/// Checks that every manifest entry loads with one shared canvas size.
pub fn verify_manifest(manifest: &Path) -> Result<usize> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = load_manifest(manifest)?;
    let canvases: BTreeSet<(usize, usize)> = records
        .par_iter()
        .map(|r| r.load(base).map(|s| (s.y.width(), s.y.height())))
        .collect::<Result<_>>()?;
    if canvases.len() > 1 {
        return Err(Error::Config(format!("manifest mixes canvas sizes {canvases:?}")));
    }
    Ok(records.len())
}
