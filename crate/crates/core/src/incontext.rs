//! Side-by-side canvases for in-context conditioning.
//!
//! The mask (or plain-text render) always occupies the LEFT slot and the RGB
//! member the RIGHT slot. Swapping the order only needs changes here.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{binarize, resize, BinaryMask, RasterImage, DEFAULT_THRESHOLD};

/// Two images joined horizontally with a known seam.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcatCanvas {
    image: RasterImage,
    seam: usize,
}

impl ConcatCanvas {
    /// Wraps an existing canvas (e.g. a decoded sample) with a seam.
    pub fn from_parts(image: RasterImage, seam: usize) -> Result<Self> {
        if seam == 0 || seam >= image.width() {
            return Err(Error::Seam {
                seam,
                width: image.width(),
            });
        }
        Ok(Self { image, seam })
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn into_image(self) -> RasterImage {
        self.image
    }

    pub fn seam(&self) -> usize {
        self.seam
    }

    pub fn left_width(&self) -> usize {
        self.seam
    }

    pub fn right_width(&self) -> usize {
        self.image.width() - self.seam
    }
}

/// Joins `left` and `right` into one canvas; columns `[0, left.width())`
/// hold `left`.
pub fn concat_h(left: &RasterImage, right: &RasterImage) -> Result<ConcatCanvas> {
    if left.height() != right.height() || left.channels() != right.channels() {
        return Err(Error::Shape {
            left: left.describe(),
            right: right.describe(),
        });
    }
    let c = left.channels();
    let width = left.width() + right.width();
    let mut pixels = Vec::with_capacity(width * left.height() * c);
    for y in 0..left.height() {
        let l = y * left.width() * c;
        let r = y * right.width() * c;
        pixels.extend_from_slice(&left.pixels()[l..l + left.width() * c]);
        pixels.extend_from_slice(&right.pixels()[r..r + right.width() * c]);
    }
    Ok(ConcatCanvas {
        image: RasterImage::from_raw(width, left.height(), c, pixels)?,
        seam: left.width(),
    })
}

/// Cuts a canvas back into its two halves at the seam.
pub fn split_h(canvas: &ConcatCanvas) -> Result<(RasterImage, RasterImage)> {
    let img = canvas.image();
    let seam = canvas.seam();
    if seam == 0 || seam >= img.width() {
        return Err(Error::Seam {
            seam,
            width: img.width(),
        });
    }
    let c = img.channels();
    let rw = img.width() - seam;
    let mut left = Vec::with_capacity(seam * img.height() * c);
    let mut right = Vec::with_capacity(rw * img.height() * c);
    for y in 0..img.height() {
        let row = y * img.width() * c;
        left.extend_from_slice(&img.pixels()[row..row + seam * c]);
        right.extend_from_slice(&img.pixels()[row + seam * c..row + img.width() * c]);
    }
    Ok((
        RasterImage::from_raw(seam, img.height(), c, left)?,
        RasterImage::from_raw(rw, img.height(), c, right)?,
    ))
}

/// Lifts a mask into the RGB slot: 0 -> 0, 1 -> 255 in all three channels.
pub fn lift(mask: &BinaryMask) -> RasterImage {
    mask.lift_rgb()
}

/// Recovers the mask from a left-slot image by luminance thresholding.
pub fn unlift(img: &RasterImage, threshold: u8) -> Result<BinaryMask> {
    binarize(&img.to_gray(), threshold)
}

/// Resizes an image to the square slot size and forces three channels.
pub fn normalize_slot(img: &RasterImage, canvas: usize) -> Result<RasterImage> {
    resize(&img.to_rgb(), canvas, canvas)
}

/// The four images of one sample, already loaded.
#[derive(Debug, Clone)]
pub struct SampleImages {
    pub sample_id: String,
    /// plain-text render
    pub y_m: RasterImage,
    /// marked context
    pub y: RasterImage,
    /// ground-truth shape mask
    pub x_m: BinaryMask,
    /// ground-truth RGB crop
    pub x: RasterImage,
    pub prompt: String,
}

/// Conditioning and target canvases for one training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: ConcatCanvas,
    pub target: ConcatCanvas,
    pub prompt: String,
}

fn tag(sample_id: &str, err: Error) -> Error {
    match err {
        Error::Shape { left, right } => Error::Shape {
            left: alloc::format!("{sample_id}: {left}"),
            right,
        },
        other => Error::Backend(alloc::format!("{sample_id}: {other}")),
    }
}

/// `input = concat_h(y_m, y)`, `target = concat_h(lift(x_m), x)`; every half
/// is resized to a `canvas × canvas` RGB slot first.
pub fn build_training_pair(sample: &SampleImages, canvas: usize) -> Result<TrainingPair> {
    let id = sample.sample_id.as_str();
    let slot = |img: &RasterImage| normalize_slot(img, canvas).map_err(|e| tag(id, e));
    let x_m = if sample.x_m.width() == canvas && sample.x_m.height() == canvas {
        lift(&sample.x_m)
    } else {
        let resized = crate::raster::resize_mask(&sample.x_m, canvas, canvas).map_err(|e| tag(id, e))?;
        lift(&resized)
    };
    let input = concat_h(&slot(&sample.y_m)?, &slot(&sample.y)?).map_err(|e| tag(id, e))?;
    let target = concat_h(&x_m, &slot(&sample.x)?).map_err(|e| tag(id, e))?;
    Ok(TrainingPair {
        input,
        target,
        prompt: sample.prompt.clone(),
    })
}

/// Left half of a generated canvas, binarized back into a mask.
pub fn mask_from_canvas(canvas: &ConcatCanvas) -> Result<BinaryMask> {
    let (left, _) = split_h(canvas)?;
    unlift(&left, DEFAULT_THRESHOLD)
}
