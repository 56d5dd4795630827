//! Annotation sources and their merge into per-instance records.
//!
//! Layout under a data root:
//!
//! ```text
//! pages/<page_id>.png           page images (page ids may contain '/')
//! text_annotations.jsonl        {"page_id", "title", "text", "polygon": [[x, y], ...]}
//! mask_annotations.jsonl        {"page_id", "mask": "<path relative to the root>"}
//! masks/...                     one 1-channel {0, 255} page-sized PNG per instance
//! split.json (optional)         {"train": [titles], "test": [titles]}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mangasfx_core::raster::{PolygonRegion, Rect};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const TEXT_FILE: &str = "text_annotations.jsonl";
pub const MASK_FILE: &str = "mask_annotations.jsonl";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAnnotation {
    pub page_id: String,
    pub title: String,
    pub text: String,
    pub polygon: PolygonRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskAnnotation {
    pub page_id: String,
    pub mask: PathBuf,
}

/// One onomatopoeia instance with both a text label and a pixel mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub page_id: String,
    pub title: String,
    pub text: String,
    pub polygon: PolygonRegion,
    pub page_image: PathBuf,
    pub mask_image: PathBuf,
}

pub fn page_path(root: &Path, page_id: &str) -> PathBuf {
    root.join("pages").join(format!("{page_id}.png"))
}

/// Pixel box around a polygon, unclipped.
pub fn polygon_box(polygon: &PolygonRegion) -> Option<Rect> {
    let (x0, y0, x1, y1) = polygon.extent();
    let (x0, y0) = (x0.floor().max(0.0) as usize, y0.floor().max(0.0) as usize);
    let (x1, y1) = (x1.ceil().max(0.0) as usize, y1.ceil().max(0.0) as usize);
    (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Pairs text boxes with mask boxes so that the summed IoU is maximal,
/// ignoring pairs below `floor`. Returns `(text, mask)` index pairs sorted by
/// text index.
pub fn match_instances(text_boxes: &[Rect], mask_boxes: &[Rect], floor: f64) -> Vec<(usize, usize)> {
    if text_boxes.is_empty() || mask_boxes.is_empty() {
        return Vec::new();
    }
    // weights in micro-IoU; kuhn_munkres wants rows <= columns
    let weight = |t: &Rect, m: &Rect| {
        let iou = t.iou(m);
        if iou >= floor && iou > 0.0 {
            (iou * 1e9).round() as i64
        } else {
            0
        }
    };
    let transposed = text_boxes.len() > mask_boxes.len();
    let (rows, cols) = if transposed { (mask_boxes, text_boxes) } else { (text_boxes, mask_boxes) };
    let w = Matrix::from_fn(rows.len(), cols.len(), |(r, c)| {
        if transposed {
            weight(&cols[c], &rows[r])
        } else {
            weight(&rows[r], &cols[c])
        }
    });
    let (_, assignment) = kuhn_munkres(&w);
    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| w[(r, c)] > 0)
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeSummary {
    pub records: usize,
    pub dropped_text: usize,
    pub dropped_masks: usize,
}

/// Joins text and mask annotations page by page.
pub fn merge_sources(root: &Path, texts: &[TextAnnotation], masks: &[MaskAnnotation], floor: f64) -> Result<(Vec<AnnotationRecord>, MergeSummary)> {
    let mut pages: BTreeMap<&str, (Vec<&TextAnnotation>, Vec<&MaskAnnotation>)> = BTreeMap::new();
    for t in texts {
        pages.entry(&t.page_id).or_default().0.push(t);
    }
    for m in masks {
        pages.entry(&m.page_id).or_default().1.push(m);
    }
    let missing: Vec<String> = pages
        .keys()
        .filter(|id| !page_path(root, id).is_file())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPages(missing));
    }
    let mut records = Vec::new();
    let mut summary = MergeSummary::default();
    for (page_id, (page_texts, page_masks)) in pages {
        let mut text_boxes = Vec::new();
        let mut text_idx = Vec::new();
        for (i, t) in page_texts.iter().enumerate() {
            match polygon_box(&t.polygon) {
                Some(b) if !t.text.is_empty() => {
                    text_boxes.push(b);
                    text_idx.push(i);
                }
                _ => summary.dropped_text += 1,
            }
        }
        let mut mask_boxes = Vec::new();
        let mut mask_idx = Vec::new();
        for (i, m) in page_masks.iter().enumerate() {
            match io::load_mask(&root.join(&m.mask))?.bounding_rect() {
                Some(b) => {
                    mask_boxes.push(b);
                    mask_idx.push(i);
                }
                None => summary.dropped_masks += 1,
            }
        }
        let pairs = match_instances(&text_boxes, &mask_boxes, floor);
        summary.dropped_text += text_boxes.len() - pairs.len();
        summary.dropped_masks += mask_boxes.len() - pairs.len();
        for (ti, mi) in pairs {
            let t = page_texts[text_idx[ti]];
            let m = page_masks[mask_idx[mi]];
            records.push(AnnotationRecord {
                page_id: page_id.to_string(),
                title: t.title.clone(),
                text: t.text.clone(),
                polygon: t.polygon.clone(),
                page_image: page_path(root, page_id),
                mask_image: root.join(&m.mask),
            });
        }
    }
    summary.records = records.len();
    if summary.dropped_text + summary.dropped_masks > 0 {
        log::info!(
            "merge: dropped {} text and {} mask annotation(s) without a partner",
            summary.dropped_text,
            summary.dropped_masks
        );
    }
    Ok((records, summary))
}

/// Reads both annotation files under `root` and merges them.
pub fn load_and_merge(root: &Path, floor: f64) -> Result<(Vec<AnnotationRecord>, MergeSummary)> {
    let texts: Vec<TextAnnotation> = io::read_jsonl(&root.join(TEXT_FILE))?;
    let masks: Vec<MaskAnnotation> = io::read_jsonl(&root.join(MASK_FILE))?;
    for t in &texts {
        t.polygon.validate()?;
    }
    merge_sources(root, &texts, &masks, floor)
}
