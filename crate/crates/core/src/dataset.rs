//! Per-sample construction: context window, marked context, ground truth,
//! plain-text render, prompt, and the title split table.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphs::render_text;
use crate::raster::{crop, crop_mask, pad_to, rasterize_polygon, resize, resize_mask, stroke_polygon, BinaryMask, PolygonRegion, RasterImage, Rect};

pub const DEFAULT_CANVAS: usize = 512;
pub const DEFAULT_MIN_PAGE: usize = 300;
/// Context window growth on each side, as a fraction of the polygon box.
pub const DEFAULT_EXPANSION: f64 = 0.5;
pub const CAPTION_PLACEHOLDER: &str = "{caption}";
pub const DEFAULT_TEMPLATE: &str = "Draw a stylized manga onomatopoeia for the marked region. Scene: {caption}";

/// Page-size filter. `strict` keeps pages strictly larger than `min` on both sides.
pub fn passes_min_size(width: usize, height: usize, min: usize, strict: bool) -> bool {
    if strict {
        width > min && height > min
    } else {
        width >= min && height >= min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Which titles go to which split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTable {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitTable {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.train.intersection(&self.test).next() {
            return Err(Error::Config(format!("title '{t}' is listed in both splits")));
        }
        Ok(())
    }

    pub fn split_of(&self, title: &str) -> Result<Split> {
        match (self.train.contains(title), self.test.contains(title)) {
            (true, false) => Ok(Split::Train),
            (false, true) => Ok(Split::Test),
            (true, true) => Err(Error::Config(format!("title '{title}' is listed in both splits"))),
            (false, false) => Err(Error::Config(format!("title '{title}' is not in the split table"))),
        }
    }
}

/// Maps a page region onto a square training canvas: crop, resize so the
/// long side equals the canvas, then pad right/bottom to a square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub crop: Rect,
    pub canvas: usize,
    /// Size of the resized crop inside the canvas.
    pub content: (usize, usize),
}

impl ContextWindow {
    /// The polygon's box grown by `expansion` of its size per side, clamped to the page.
    pub fn around(polygon: &PolygonRegion, page_width: usize, page_height: usize, canvas: usize, expansion: f64) -> Result<Self> {
        if canvas == 0 {
            return Err(Error::Dimension { width: 0, height: 0 });
        }
        let bbox = polygon
            .bounding_rect(page_width, page_height)
            .ok_or_else(|| Error::DegenerateRegion("polygon bounding box has no area on the page".into()))?;
        let dx = libm::ceil(bbox.width as f64 * expansion) as usize;
        let dy = libm::ceil(bbox.height as f64 * expansion) as usize;
        let x0 = bbox.x.saturating_sub(dx);
        let y0 = bbox.y.saturating_sub(dy);
        let x1 = (bbox.right() + dx).min(page_width);
        let y1 = (bbox.bottom() + dy).min(page_height);
        let crop = Rect::new(x0, y0, x1 - x0, y1 - y0);
        let long = crop.width.max(crop.height) as f64;
        let fit = |side: usize| ((libm::round(side as f64 * canvas as f64 / long)) as usize).clamp(1, canvas);
        Ok(Self {
            crop,
            canvas,
            content: (fit(crop.width), fit(crop.height)),
        })
    }

    pub fn apply_image(&self, page: &RasterImage) -> Result<RasterImage> {
        let c = crop(page, self.crop)?;
        let r = resize(&c, self.content.0, self.content.1)?;
        pad_to(&r, self.canvas, self.canvas, 255)
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        let c = crop_mask(mask, self.crop)?;
        let r = resize_mask(&c, self.content.0, self.content.1)?;
        let padded = pad_to(&r.to_image(), self.canvas, self.canvas, 0)?;
        crate::raster::binarize(&padded, crate::raster::DEFAULT_THRESHOLD)
    }

    /// Page coordinates → canvas coordinates.
    pub fn map_polygon(&self, polygon: &PolygonRegion) -> Result<PolygonRegion> {
        let sx = self.content.0 as f64 / self.crop.width as f64;
        let sy = self.content.1 as f64 / self.crop.height as f64;
        let (ox, oy) = (self.crop.x as f64, self.crop.y as f64);
        PolygonRegion::new(polygon.vertices().iter().map(|v| [(v[0] - ox) * sx, (v[1] - oy) * sy]).collect())
    }
}

/// White-fills the polygon interior and draws its 1px black outline.
pub fn mark_region(image: &RasterImage, polygon: &PolygonRegion) -> Result<RasterImage> {
    let (w, h) = (image.width(), image.height());
    if polygon.bounding_rect(w, h).is_none() {
        return Err(Error::DegenerateRegion("polygon bounding box has no area on the canvas".into()));
    }
    let fill = rasterize_polygon(polygon, w, h)?;
    let edge = stroke_polygon(polygon, w, h)?;
    let ch = image.channels();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if edge.get(x, y) {
                out.pixel_mut(x, y).fill(0);
            } else if fill.get(x, y) {
                out.pixel_mut(x, y)[..ch].fill(255);
            }
        }
    }
    Ok(out)
}

/// One sample's images on the square canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCanvas {
    pub window: ContextWindow,
    /// Polygon in canvas coordinates.
    pub polygon: PolygonRegion,
    /// Unmarked crop with the onomatopoeia present.
    pub crop: RasterImage,
    /// Marked context.
    pub context: RasterImage,
}

/// Context window, GT crop `x` and marked context `y` for one polygon.
pub fn build_context_image(page: &RasterImage, polygon: &PolygonRegion, canvas: usize, expansion: f64) -> Result<SampleCanvas> {
    let page = page.to_rgb();
    let window = ContextWindow::around(polygon, page.width(), page.height(), canvas, expansion)?;
    let crop = window.apply_image(&page)?;
    let mapped = window.map_polygon(polygon)?;
    let context = mark_region(&crop, &mapped)?;
    Ok(SampleCanvas {
        window,
        polygon: mapped,
        crop,
        context,
    })
}

/// Ground-truth mask on the canvas; the RGB target is `SampleCanvas::crop`.
pub fn extract_gt(mask: &BinaryMask, window: &ContextWindow) -> Result<BinaryMask> {
    if crop_mask(mask, window.crop)?.is_empty() {
        return Err(Error::EmptyMask);
    }
    let x_m = window.apply_mask(mask)?;
    if x_m.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(x_m)
}

/// `y_m`: the text, upright and black on white, fitted into the polygon's box.
pub fn render_plain_text(text: &str, polygon: &PolygonRegion, width: usize, height: usize) -> Result<RasterImage> {
    let region = polygon
        .bounding_rect(width, height)
        .ok_or_else(|| Error::DegenerateRegion("polygon bounding box has no area on the canvas".into()))?;
    Ok(render_text(text, region, width, height)?.image)
}

/// Scene description for the prompt.
pub trait CaptionerBackend {
    fn name(&self) -> &str;
    fn caption(&self, image: &RasterImage) -> Result<String>;
}

/// Returns the same string for every image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceCaptioner {
    pub caption: String,
}

impl Default for ReferenceCaptioner {
    fn default() -> Self {
        Self {
            caption: "a black and white manga panel".to_string(),
        }
    }
}

impl CaptionerBackend for ReferenceCaptioner {
    fn name(&self) -> &str {
        "reference"
    }

    fn caption(&self, _image: &RasterImage) -> Result<String> {
        Ok(self.caption.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template: String,
    pub caption: String,
    pub rendered: String,
}

impl PromptBundle {
    pub fn new(template: &str, caption: &str) -> Self {
        Self {
            template: template.to_string(),
            caption: caption.to_string(),
            rendered: template.replace(CAPTION_PLACEHOLDER, caption),
        }
    }
}

/// Captions `context` and fills the template; a failing captioner yields an
/// empty caption and a warning.
pub fn build_prompt(context: &RasterImage, captioner: &dyn CaptionerBackend, template: &str) -> PromptBundle {
    let caption = captioner.caption(context).unwrap_or_else(|e| {
        log::warn!("captioner '{}' failed ({e}); using an empty caption", captioner.name());
        String::new()
    });
    PromptBundle::new(template, &caption)
}

/// Samples from the corpus whose text has no glyph in the built-in font.
pub fn unrenderable_chars(text: &str) -> Vec<char> {
    crate::glyphs::layout(text).1
}
