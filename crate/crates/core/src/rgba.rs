//! Mask → transparent lettering layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{dilate, BinaryMask, RasterImage};

/// Prompt handed to generative converters when none is configured.
pub const DEFAULT_CONVERTER_PROMPT: &str =
    "black manga onomatopoeia lettering with white outline, transparent background";

/// Alpha support must stay within this many pixels of the mask.
pub const DEFAULT_SUPPORT_TOLERANCE: usize = 8;

/// Four-channel image whose last channel is alpha.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbaLayer(RasterImage);

impl RgbaLayer {
    pub fn new(image: RasterImage) -> Result<Self> {
        if image.channels() != 4 {
            return Err(Error::ChannelMismatch {
                expected: 4,
                actual: image.channels(),
            });
        }
        Ok(Self(image))
    }

    pub fn transparent(width: usize, height: usize) -> Result<Self> {
        Ok(Self(RasterImage::filled(width, height, 4, 0)?))
    }

    pub fn image(&self) -> &RasterImage {
        &self.0
    }

    pub fn into_image(self) -> RasterImage {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn alpha(&self, x: usize, y: usize) -> u8 {
        self.0.get(x, y, 3)
    }

    /// Pixels with nonzero alpha.
    pub fn alpha_support(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width(), self.height(), |x, y| self.alpha(x, y) > 0).expect("layer dims are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Style {
    pub fill: [u8; 3],
    pub outline: [u8; 3],
    pub outline_px: usize,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            fill: [0, 0, 0],
            outline: [255, 255, 255],
            outline_px: 2,
        }
    }
}

/// Opaque fill on the mask, opaque outline on the square dilation band of
/// width `style.outline_px`, transparent elsewhere.
pub fn convert_reference(mask: &BinaryMask, style: &Style) -> Result<RgbaLayer> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let band = dilate(mask, style.outline_px).minus(mask)?;
    let img = RasterImage::from_fn(mask.width(), mask.height(), 4, |x, y, c| {
        let color = if mask.get(x, y) {
            &style.fill
        } else if band.get(x, y) {
            &style.outline
        } else {
            return 0;
        };
        if c == 3 {
            255
        } else {
            color[c]
        }
    })?;
    RgbaLayer::new(img)
}

/// Turns a shape mask into a lettering layer.
pub trait ConverterBackend {
    fn name(&self) -> &str;
    fn convert(&self, mask: &BinaryMask, prompt: &str) -> Result<RgbaLayer>;
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceConverter {
    pub style: Style,
}

impl ConverterBackend for ReferenceConverter {
    fn name(&self) -> &str {
        "reference"
    }

    fn convert(&self, mask: &BinaryMask, _prompt: &str) -> Result<RgbaLayer> {
        convert_reference(mask, &self.style)
    }
}

/// A validated converter result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Converted {
    pub layer: RgbaLayer,
    pub warnings: Vec<String>,
}

/// Runs `backend` and checks its output: dimensions must match the mask and
/// the alpha support should lie within the mask dilated by `tolerance_px`
/// (a warning is attached otherwise).
pub fn convert(mask: &BinaryMask, prompt: &str, backend: &dyn ConverterBackend, tolerance_px: usize) -> Result<Converted> {
    let layer = backend.convert(mask, prompt)?;
    if layer.width() != mask.width() || layer.height() != mask.height() {
        return Err(Error::BackendContract(format!(
            "converter '{}' returned {}x{} for a {}x{} mask",
            backend.name(),
            layer.width(),
            layer.height(),
            mask.width(),
            mask.height()
        )));
    }
    let mut warnings = Vec::new();
    let allowed = dilate(mask, tolerance_px);
    let support = layer.alpha_support();
    if !support.is_subset_of(&allowed) {
        let stray = support.minus(&allowed)?.count_ones();
        let msg = format!(
            "converter '{}': {stray} alpha pixel(s) farther than {tolerance_px}px from the mask",
            backend.name()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Converted { layer, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)).unwrap()
    }

    #[test]
    fn single_pixel_no_outline() {
        let mut m = BinaryMask::zeros(5, 5).unwrap();
        m.set(2, 3, true);
        let style = Style {
            fill: [10, 20, 30],
            outline: [1, 1, 1],
            outline_px: 0,
        };
        let layer = convert_reference(&m, &style).unwrap();
        assert_eq!(layer.alpha_support().count_ones(), 1);
        assert_eq!(layer.image().pixel(2, 3), &[10, 20, 30, 255]);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let m = BinaryMask::zeros(4, 4).unwrap();
        assert_eq!(convert_reference(&m, &Style::default()).unwrap_err(), Error::EmptyMask);
    }

    #[test]
    fn square_grows_by_outline() {
        let m = square(9, 9, 3, 3, 3);
        let style = Style {
            outline_px: 1,
            ..Style::default()
        };
        let layer = convert_reference(&m, &style).unwrap();
        assert_eq!(layer.alpha_support(), square(9, 9, 2, 2, 5));
        assert_eq!(layer.image().pixel(2, 2), &[255, 255, 255, 255]);
        assert_eq!(layer.image().pixel(4, 4), &[0, 0, 0, 255]);
        assert_eq!(layer.image().pixel(0, 0), &[0, 0, 0, 0]);
        // clipped at the border
        let corner = square(4, 4, 0, 0, 3);
        let l = convert_reference(&corner, &style).unwrap();
        assert_eq!(l.alpha_support().count_ones(), 16);
    }

    struct WrongSize;
    impl ConverterBackend for WrongSize {
        fn name(&self) -> &str {
            "wrong-size"
        }
        fn convert(&self, _: &BinaryMask, _: &str) -> Result<RgbaLayer> {
            RgbaLayer::transparent(3, 3)
        }
    }

    struct Everywhere;
    impl ConverterBackend for Everywhere {
        fn name(&self) -> &str {
            "everywhere"
        }
        fn convert(&self, m: &BinaryMask, _: &str) -> Result<RgbaLayer> {
            RgbaLayer::new(RasterImage::filled(m.width(), m.height(), 4, 255)?)
        }
    }

    #[test]
    fn convert_validates_backend_output() {
        let m = square(20, 20, 0, 0, 2);
        let reference = ReferenceConverter::default();
        let ok = convert(&m, DEFAULT_CONVERTER_PROMPT, &reference, 8).unwrap();
        assert_eq!(ok.layer, convert_reference(&m, &Style::default()).unwrap());
        assert!(ok.warnings.is_empty());

        assert!(matches!(convert(&m, "", &WrongSize, 8), Err(Error::BackendContract(_))));

        let spread = convert(&m, "", &Everywhere, 8).unwrap();
        assert_eq!(spread.warnings.len(), 1);
        // 20x20 minus the 10x10 dilated corner
        assert!(spread.warnings[0].contains("300"));
    }

    proptest::proptest! {
        #[test]
        fn support_is_exact_dilation(
            (w, h) in (1usize..24, 1usize..24),
            bits in proptest::collection::vec(proptest::prelude::any::<u8>(), 576),
            r in 0usize..4,
        ) {
            let m = BinaryMask::from_fn(w, h, |x, y| bits[y * 24 + x] < 20).unwrap();
            proptest::prop_assume!(!m.is_empty());
            let style = Style { outline_px: r, ..Style::default() };
            let layer = convert_reference(&m, &style).unwrap();
            proptest::prop_assert_eq!((layer.image().width(), layer.image().height()), (w, h));
            let support = layer.alpha_support();
            for y in 0..h {
                for x in 0..w {
                    let near = (y.saturating_sub(r)..=(y + r).min(h - 1))
                        .any(|sy| (x.saturating_sub(r)..=(x + r).min(w - 1)).any(|sx| m.get(sx, sy)));
                    proptest::prop_assert_eq!(support.get(x, y), near);
                }
            }
            proptest::prop_assert_eq!(convert_reference(&m, &style).unwrap(), layer);
        }
    }
}
