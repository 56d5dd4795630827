//! Pixel ↔ latent bridge.
//!
//! The reference codec packs every `f × f` block of a `C`-channel image into
//! `C·f²` latent channels, with intensities mapped to `[0, 1]`. Latent shape
//! is `(C·f², H/f, W/f)`; channel `c·f² + dy·f + dx` holds pixel
//! `(f·x + dx, f·y + dy)` of image channel `c`.

use alloc::format;

use crate::error::{Error, Result};
use crate::flow::LatentTensor;
use crate::raster::{round_intensity, RasterImage};

pub const DEFAULT_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchCodec {
    factor: usize,
}

impl Default for PatchCodec {
    fn default() -> Self {
        Self { factor: DEFAULT_FACTOR }
    }
}

impl PatchCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("codec factor must be positive".into()));
        }
        Ok(Self { factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Latent shape for an image of the given size.
    pub fn latent_shape(&self, width: usize, height: usize, channels: usize) -> Result<(usize, usize, usize)> {
        let f = self.factor;
        if width % f != 0 || height % f != 0 {
            return Err(Error::Shape {
                left: format!("{width}x{height} image"),
                right: format!("downsample factor {f}"),
            });
        }
        Ok((channels * f * f, height / f, width / f))
    }

    pub fn encode(&self, image: &RasterImage) -> Result<LatentTensor> {
        let (lc, lh, lw) = self.latent_shape(image.width(), image.height(), image.channels())?;
        let f = self.factor;
        let mut latent = LatentTensor::zeros(lc, lh, lw);
        let values = latent.values_mut();
        for c in 0..image.channels() {
            for dy in 0..f {
                for dx in 0..f {
                    let ch = c * f * f + dy * f + dx;
                    for y in 0..lh {
                        for x in 0..lw {
                            let v = image.get(f * x + dx, f * y + dy, c);
                            values[(ch * lh + y) * lw + x] = v as f64 / 255.0;
                        }
                    }
                }
            }
        }
        Ok(latent)
    }

    /// Inverse packing; values are clamped into the intensity range.
    pub fn decode(&self, latent: &LatentTensor, channels: usize) -> Result<RasterImage> {
        let f = self.factor;
        if latent.channels() != channels * f * f {
            return Err(Error::Shape {
                left: format!("latent {:?}", latent.shape()),
                right: format!("{channels} image channels at factor {f}"),
            });
        }
        let (lh, lw) = (latent.height(), latent.width());
        let mut img = RasterImage::filled(lw * f, lh * f, channels, 0)?;
        for c in 0..channels {
            for dy in 0..f {
                for dx in 0..f {
                    let ch = c * f * f + dy * f + dx;
                    for y in 0..lh {
                        for x in 0..lw {
                            let v = latent.at(ch, y, x) * 255.0;
                            img.set(f * x + dx, f * y + dy, c, round_intensity(v));
                        }
                    }
                }
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_contract() {
        let codec = PatchCodec::default();
        let img = RasterImage::filled(32, 16, 3, 7).unwrap();
        assert_eq!(codec.encode(&img).unwrap().shape(), (192, 2, 4));
        let bad = RasterImage::filled(30, 16, 3, 7).unwrap();
        assert!(matches!(codec.encode(&bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn black_is_zero_latent() {
        let codec = PatchCodec::new(2).unwrap();
        let black = RasterImage::filled(4, 4, 1, 0).unwrap();
        assert!(codec.encode(&black).unwrap().values().iter().all(|&v| v == 0.0));
        let white = RasterImage::filled(4, 4, 1, 255).unwrap();
        assert!(codec.encode(&white).unwrap().values().iter().all(|&v| v == 1.0));
    }

    proptest! {
        #[test]
        fn round_trip_within_one(px in proptest::collection::vec(any::<u8>(), 16 * 8 * 3)) {
            let codec = PatchCodec::new(8).unwrap();
            let img = RasterImage::from_raw(16, 8, 3, px).unwrap();
            let back = codec.decode(&codec.encode(&img).unwrap(), 3).unwrap();
            let err = img.pixels().iter().zip(back.pixels()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
            prop_assert!(err <= 1);
        }
    }
}
