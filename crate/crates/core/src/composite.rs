//! Hole inpainting and alpha-over compositing of the lettering layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{rasterize_polygon, round_intensity, stroke_polygon, BinaryMask, PolygonRegion, RasterImage};
use crate::rgba::RgbaLayer;

pub const DEFAULT_TOLERANCE: f64 = 0.1;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

/// Fills the pixels of `hole` and returns every other pixel untouched.
pub trait InpainterBackend {
    fn name(&self) -> &str;
    fn inpaint(&self, image: &RasterImage, hole: &BinaryMask) -> Result<RasterImage>;
}

/// Harmonic fill by Jacobi iteration of 4-neighbor averaging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceInpainter {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ReferenceInpainter {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl InpainterBackend for ReferenceInpainter {
    fn name(&self) -> &str {
        "reference"
    }

    fn inpaint(&self, image: &RasterImage, hole: &BinaryMask) -> Result<RasterImage> {
        inpaint_reference(image, hole, self.tolerance, self.max_iterations)
    }
}

fn check_hole(image: &RasterImage, hole: &BinaryMask) -> Result<()> {
    if image.width() != hole.width() || image.height() != hole.height() {
        return Err(Error::Shape {
            left: image.describe(),
            right: format!("hole {}x{}", hole.width(), hole.height()),
        });
    }
    Ok(())
}

/// Each hole pixel converges to the mean of its in-bounds 4-neighbors.
/// Iteration stops once no value moves by more than `tolerance` or after
/// `max_iterations` sweeps; results are rounded half-up.
pub fn inpaint_reference(image: &RasterImage, hole: &BinaryMask, tolerance: f64, max_iterations: usize) -> Result<RasterImage> {
    check_hole(image, hole)?;
    if hole.is_empty() {
        return Ok(image.clone());
    }
    if hole.is_full() {
        return Err(Error::DegenerateHole);
    }
    let (w, h, ch) = image.shape();
    let holes: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| hole.get(x, y))
        .collect();
    let neighbors = |x: usize, y: usize| {
        let mut n = [(0usize, 0usize); 4];
        let mut k = 0;
        if x > 0 {
            n[k] = (x - 1, y);
            k += 1;
        }
        if x + 1 < w {
            n[k] = (x + 1, y);
            k += 1;
        }
        if y > 0 {
            n[k] = (x, y - 1);
            k += 1;
        }
        if y + 1 < h {
            n[k] = (x, y + 1);
            k += 1;
        }
        (n, k)
    };

    // seed the hole with the mean of its known rim
    let mut rim_sum = vec![0.0; ch];
    let mut rim_count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if hole.get(x, y) {
                continue;
            }
            let (n, k) = neighbors(x, y);
            if n[..k].iter().any(|&(nx, ny)| hole.get(nx, ny)) {
                for (c, s) in rim_sum.iter_mut().enumerate() {
                    *s += image.get(x, y, c) as f64;
                }
                rim_count += 1;
            }
        }
    }
    let mut field: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
    for &(x, y) in &holes {
        for c in 0..ch {
            field[(y * w + x) * ch + c] = rim_sum[c] / rim_count as f64;
        }
    }

    let mut next = field.clone();
    for _ in 0..max_iterations {
        let mut max_change: f64 = 0.0;
        for &(x, y) in &holes {
            let (n, k) = neighbors(x, y);
            for c in 0..ch {
                let s: f64 = n[..k].iter().map(|&(nx, ny)| field[(ny * w + nx) * ch + c]).sum();
                let v = s / k as f64;
                let i = (y * w + x) * ch + c;
                max_change = max_change.max(libm::fabs(v - field[i]));
                next[i] = v;
            }
        }
        core::mem::swap(&mut field, &mut next);
        if max_change < tolerance {
            break;
        }
    }

    let mut out = image.clone();
    for &(x, y) in &holes {
        for c in 0..ch {
            out.set(x, y, c, round_intensity(field[(y * w + x) * ch + c]));
        }
    }
    Ok(out)
}

/// Runs any inpainter and enforces that pixels outside the hole come back
/// bit-identical.
pub fn inpaint_checked(backend: &dyn InpainterBackend, image: &RasterImage, hole: &BinaryMask) -> Result<RasterImage> {
    check_hole(image, hole)?;
    let out = backend.inpaint(image, hole)?;
    if out.shape() != image.shape() {
        return Err(Error::BackendContract(format!(
            "inpainter '{}' returned {} for a {} input",
            backend.name(),
            out.describe(),
            image.describe()
        )));
    }
    let (w, h) = (image.width(), image.height());
    for y in 0..h {
        for x in 0..w {
            if !hole.get(x, y) && out.pixel(x, y) != image.pixel(x, y) {
                return Err(Error::BackendContract(format!(
                    "inpainter '{}' changed pixel ({x}, {y}) outside the hole",
                    backend.name()
                )));
            }
        }
    }
    Ok(out)
}

/// `out = fg·a + bg·(1 − a)` with `a = alpha / 255`, rounded half-up, in
/// exact integer arithmetic. The layer is placed with its top-left corner at
/// `offset` and clipped to the background.
pub fn alpha_over(background: &RasterImage, layer: &RgbaLayer, offset: (i64, i64)) -> Result<RasterImage> {
    if background.channels() != 3 {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: background.channels(),
        });
    }
    let mut out = background.clone();
    let (bw, bh) = (background.width() as i64, background.height() as i64);
    for ly in 0..layer.height() {
        let y = offset.1 + ly as i64;
        if y < 0 || y >= bh {
            continue;
        }
        for lx in 0..layer.width() {
            let x = offset.0 + lx as i64;
            if x < 0 || x >= bw {
                continue;
            }
            let src = layer.image().pixel(lx, ly);
            let a = src[3] as u32;
            if a == 0 {
                continue;
            }
            let dst = out.pixel_mut(x as usize, y as usize);
            for c in 0..3 {
                let num = src[c] as u32 * a + dst[c] as u32 * (255 - a);
                // round(num / 255) half-up
                dst[c] = ((2 * num + 255) / 510) as u8;
            }
        }
    }
    Ok(out)
}

/// Where the lettering layer is pasted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// The layer covers the whole canvas; offset (0, 0).
    #[default]
    Aligned,
    /// The layer's top-left goes to the polygon's bounding-box corner.
    PolygonBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composite {
    pub image: RasterImage,
    /// Hole-inpainted background.
    pub background: RasterImage,
    pub hole: BinaryMask,
    pub offset: (i64, i64),
}

/// The pixels the dataset builder touched when marking a region: the
/// polygon interior plus its 1px outline.
pub fn marked_region(polygon: &PolygonRegion, width: usize, height: usize) -> Result<BinaryMask> {
    rasterize_polygon(polygon, width, height)?.union(&stroke_polygon(polygon, width, height)?)
}

/// Inpaints the marked region of `context` and pastes `layer` on top.
pub fn compose_final(
    context: &RasterImage,
    polygon: &PolygonRegion,
    layer: &RgbaLayer,
    inpainter: &dyn InpainterBackend,
    placement: Placement,
) -> Result<Composite> {
    let (w, h) = (context.width(), context.height());
    let bbox = polygon
        .bounding_rect(w, h)
        .ok_or_else(|| Error::DegenerateRegion("polygon bounding box has no area on the canvas".into()))?;
    let hole = marked_region(polygon, w, h)?;
    let background = inpaint_checked(inpainter, context, &hole)?;
    let offset = match placement {
        Placement::Aligned => (0, 0),
        Placement::PolygonBox => (bbox.x as i64, bbox.y as i64),
    };
    let image = alpha_over(&background, layer, offset)?;
    Ok(Composite {
        image,
        background,
        hole,
        offset,
    })
}
