//! FID and NED over a variant's generated images, and the comparison table.

use std::fmt::Write as _;
use std::path::Path;

use mangasfx_core::dataset::Split;
use mangasfx_core::metrics::{fid, ned_pair, FeatureExtractor, MetricReport, RecognizerBackend};
use mangasfx_core::raster::{crop, PolygonRegion, RasterImage};
use rayon::prelude::*;

use crate::backends::OracleRecognizer;
use crate::dataset::{load_manifest, SampleRecord};
use crate::error::{Error, Result};
use crate::generate::image_path;
use crate::io;

/// The part of an image the recognizer reads: the polygon's bounding box,
/// or the whole image when the box misses it.
pub fn text_region(img: &RasterImage, polygon: &PolygonRegion) -> Result<RasterImage> {
    match polygon.bounding_rect(img.width(), img.height()) {
        Some(r) => Ok(crop(img, r)?),
        None => Ok(img.clone()),
    }
}

fn split_records(manifest: &Path, split: Split) -> Result<Vec<SampleRecord>> {
    let mut records: Vec<SampleRecord> = load_manifest(manifest)?.into_iter().filter(|r| r.split == split).collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(records)
}

/// Recognizer that reads each ground-truth text region as its manifest text.
pub fn oracle_recognizer(manifest: &Path, split: Split) -> Result<OracleRecognizer> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries: Vec<(RasterImage, String)> = split_records(manifest, split)?
        .par_iter()
        .map(|r| {
            let x = io::load_image(&base.join(&r.x))?.to_rgb();
            Ok((text_region(&x, &r.polygon)?, r.text.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(OracleRecognizer::new(entries.iter().map(|(i, t)| (i, t.as_str()))))
}

pub struct EvalOptions<'a> {
    pub variant: &'a str,
    pub split: Split,
    /// Missing outputs abort instead of being skipped.
    pub strict: bool,
    pub config_digest: &'a str,
}

/// Scores `generated_dir` against the manifest's ground truth. Samples are
/// processed in `sample_id` order so the report does not depend on the
/// manifest's line order.
pub fn evaluate_run(
    generated_dir: &Path,
    manifest: &Path,
    extractor: &(dyn FeatureExtractor + Sync),
    recognizer: &(dyn RecognizerBackend + Sync),
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = split_records(manifest, opts.split)?;
    let (present, missing): (Vec<&SampleRecord>, Vec<&SampleRecord>) =
        records.iter().partition(|r| image_path(generated_dir, &r.sample_id).exists());
    if !missing.is_empty() {
        let ids: Vec<String> = missing.iter().map(|r| r.sample_id.clone()).collect();
        if opts.strict {
            return Err(Error::MissingOutputs(ids));
        }
        log::warn!("{} generated output(s) missing, skipped: {}", ids.len(), ids.join(", "));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = present
        .par_iter()
        .map(|r| {
            let inner = || -> Result<_> {
                let generated = io::load_image(&image_path(generated_dir, &r.sample_id))?.to_rgb();
                let gt = io::load_image(&base.join(&r.x))?.to_rgb();
                let fg = extractor.extract(&generated)?;
                let fx = extractor.extract(&gt)?;
                let read = recognizer.recognize(&text_region(&generated, &r.polygon)?)?;
                Ok((fg, fx, ned_pair(&read, &r.text)))
            };
            inner().map_err(|e| e.for_sample(&r.sample_id))
        })
        .collect::<Result<_>>()?;
    if rows.len() < 2 {
        return Err(Error::Config(format!("{} scorable sample(s); FID needs at least 2", rows.len())));
    }
    let gen_features: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let gt_features: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let fid = fid(&gen_features, &gt_features)?;
    let ned = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    let report = MetricReport {
        variant: opts.variant.to_string(),
        fid,
        ned,
        sample_count: rows.len(),
        config_digest: opts.config_digest.to_string(),
        skipped: missing.len(),
    };
    report.validate()?;
    Ok(report)
}

/// `variant,fid,ned,sample_count,skipped,config_digest`
pub fn render_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("variant,fid,ned,sample_count,skipped,config_digest\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.variant, r.fid, r.ned, r.sample_count, r.skipped, r.config_digest);
    }
    out
}

/// Aligned text version of the table.
pub fn render_text(reports: &[MetricReport]) -> String {
    let name_w = reports.iter().map(|r| r.variant.len()).max().unwrap_or(0).max("variant".len());
    let mut out = format!("{:<name_w$}  {:>10}  {:>6}  {:>7}\n", "variant", "FID", "NED", "samples");
    for r in reports {
        let _ = writeln!(out, "{:<name_w$}  {:>10.3}  {:>6.3}  {:>7}", r.variant, r.fid, r.ned, r.sample_count);
    }
    out
}
