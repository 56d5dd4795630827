//! Pixel containers and the deterministic raster primitives everything else
//! is built on: polygon fill and stroke, binarization, crop, pad, resize and
//! square dilation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default binarization threshold (inclusive).
pub const DEFAULT_THRESHOLD: u8 = 128;

/// Row-major 8-bit image with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    /// Creates an image with every channel of every pixel set to `fill`.
    pub fn filled(width: usize, height: usize, channels: usize, fill: u8) -> Result<Self> {
        check_dims(width, height)?;
        check_channels(channels)?;
        Ok(Self {
            width,
            height,
            channels,
            pixels: vec![fill; width * height * channels],
        })
    }

    /// Creates an image filled with a per-channel color; `color.len()` is the
    /// channel count.
    pub fn from_color(width: usize, height: usize, color: &[u8]) -> Result<Self> {
        check_dims(width, height)?;
        check_channels(color.len())?;
        let mut pixels = Vec::with_capacity(width * height * color.len());
        for _ in 0..width * height {
            pixels.extend_from_slice(color);
        }
        Ok(Self {
            width,
            height,
            channels: color.len(),
            pixels,
        })
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        check_channels(channels)?;
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y, channel)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        check_dims(width, height)?;
        check_channels(channels)?;
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    /// `(width, height, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    /// Channel values of the pixel at `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = self.offset(x, y);
        &self.pixels[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.pixels[o..o + c]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.pixels[self.offset(x, y) + channel]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: u8) {
        let o = self.offset(x, y) + channel;
        self.pixels[o] = value;
    }

    /// Luminance of one pixel; gray images return their value.
    pub fn luminance_at(&self, x: usize, y: usize) -> u8 {
        let p = self.pixel(x, y);
        match self.channels {
            1 => p[0],
            _ => luminance(p[0], p[1], p[2]),
        }
    }

    /// Single-channel luminance image. Alpha is ignored.
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(self.channels)
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// Three-channel copy: gray is replicated, alpha is dropped.
    pub fn to_rgb(&self) -> RasterImage {
        let pixels = match self.channels {
            1 => self.pixels.iter().flat_map(|&v| [v, v, v]).collect(),
            3 => self.pixels.clone(),
            _ => self
                .pixels
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
        };
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    pub fn describe(&self) -> alloc::string::String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// `round(0.299 R + 0.587 G + 0.114 B)` with exact half-up rounding.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

/// Row-major mask with one bit per pixel, stored as bytes in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![0; width * height],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![1; width * height],
        })
    }

    /// Any nonzero byte counts as set.
    pub fn from_raw(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: values.len(),
            });
        }
        let bits = values.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(x, y)));
            }
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b != 0)
    }

    /// Gray image with set pixels at 255 and clear pixels at 0.
    pub fn to_image(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels: self.bits.iter().map(|&b| b * 255).collect(),
        }
    }

    /// Three-channel image with set pixels at 255 in every channel.
    pub fn lift_rgb(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.bits.iter().flat_map(|&b| [b * 255; 3]).collect(),
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Set pixels of `self` that are clear in `other`.
    pub fn minus(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a & (1 - b)).collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(a, b)| *a <= *b)
    }

    /// Tight bounding rectangle of the set pixels, `None` when empty.
    pub fn bounding_rect(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape {
                left: format!("{}x{}", self.width, self.height),
                right: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection(other).map_or(0, |r| r.area());
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Polygonal placement region in page (or canvas) pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonRegion {
    vertices: Vec<[f64; 2]>,
}

impl PolygonRegion {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(vertices.len()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polygon vertex".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle polygon.
    pub fn rect(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            vertices: vec![[x, y], [x + width, y], [x + width, y + height], [x, y + height]],
        }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Re-validates after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.vertices.clone()).map(|_| ())
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), v| (a.min(v[0]), b.min(v[1]), c.max(v[0]), d.max(v[1])),
        )
    }

    /// Smallest pixel rectangle containing the polygon, clipped to a
    /// `width × height` canvas. `None` when the clipped box has no area.
    pub fn bounding_rect(&self, width: usize, height: usize) -> Option<Rect> {
        let (x0, y0, x1, y1) = self.extent();
        let cx0 = libm::floor(x0).clamp(0.0, width as f64) as usize;
        let cy0 = libm::floor(y0).clamp(0.0, height as f64) as usize;
        let cx1 = libm::ceil(x1).clamp(0.0, width as f64) as usize;
        let cy1 = libm::ceil(y1).clamp(0.0, height as f64) as usize;
        (cx1 > cx0 && cy1 > cy0).then(|| Rect::new(cx0, cy0, cx1 - cx0, cy1 - cy0))
    }

    /// Vertices clamped into `[0, width] × [0, height]`.
    pub fn clamped(&self, width: usize, height: usize) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| [v[0].clamp(0.0, width as f64), v[1].clamp(0.0, height as f64)])
            .collect();
        Self { vertices }
    }

    /// Applies `p -> (p - origin) * scale` to every vertex.
    pub fn transformed(&self, origin: [f64; 2], scale: f64) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|v| [(v[0] - origin[0]) * scale, (v[1] - origin[1]) * scale])
            .collect();
        Self { vertices }
    }

    /// Even-odd containment of a point (crossing-number test).
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

/// Fills the polygon with the even-odd rule, sampling at pixel centers
/// `(x + 0.5, y + 0.5)`.
pub fn rasterize_polygon(poly: &PolygonRegion, width: usize, height: usize) -> Result<BinaryMask> {
    check_dims(width, height)?;
    let verts = poly.vertices();
    if verts.len() < 3 {
        return Err(Error::DegeneratePolygon(verts.len()));
    }
    let mut mask = BinaryMask::zeros(width, height)?;
    let mut crossings: Vec<f64> = Vec::with_capacity(verts.len());
    for row in 0..height {
        let py = row as f64 + 0.5;
        crossings.clear();
        let mut j = verts.len() - 1;
        for i in 0..verts.len() {
            let [xi, yi] = verts[i];
            let [xj, yj] = verts[j];
            if (yi > py) != (yj > py) {
                crossings.push((xj - xi) * (py - yi) / (yj - yi) + xi);
            }
            j = i;
        }
        crossings.sort_by(f64::total_cmp);
        // a center is inside iff an odd number of crossings lie at or left of it
        for span in crossings.chunks_exact(2) {
            let start = libm::ceil(span[0] - 0.5).max(0.0);
            let end = libm::ceil(span[1] - 0.5).min(width as f64);
            if end <= start {
                continue;
            }
            for col in start as usize..end as usize {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

/// Pixel coordinates of a polygon vertex, clamped onto the canvas.
fn vertex_pixel(v: [f64; 2], width: usize, height: usize) -> (i64, i64) {
    let x = libm::floor(v[0]).clamp(0.0, (width - 1) as f64) as i64;
    let y = libm::floor(v[1]).clamp(0.0, (height - 1) as f64) as i64;
    (x, y)
}

/// Integer line from `a` to `b`: one pixel per step along the major axis, the
/// minor coordinate rounded half-up from the exact rational position.
pub fn line_points(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    if dx == 0 && dy == 0 {
        return vec![a];
    }
    let x_major = dx.abs() >= dy.abs();
    let (major, minor) = if x_major { (dx, dy) } else { (dy, dx) };
    let steps = major.abs();
    let dir = major.signum();
    (0..=steps)
        .map(|k| {
            let step = k * dir;
            // step * minor / major, rounded half-up
            let (mut num, mut den) = (step * minor, major);
            if den < 0 {
                num = -num;
                den = -den;
            }
            let offset = (2 * num + den).div_euclid(2 * den);
            if x_major {
                (a.0 + step, a.1 + offset)
            } else {
                (a.0 + offset, a.1 + step)
            }
        })
        .collect()
}

/// 1px outline of the polygon: lines between consecutive vertices, each
/// vertex snapped to the pixel containing it (clamped onto the canvas).
pub fn stroke_polygon(poly: &PolygonRegion, width: usize, height: usize) -> Result<BinaryMask> {
    check_dims(width, height)?;
    let verts = poly.vertices();
    if verts.len() < 3 {
        return Err(Error::DegeneratePolygon(verts.len()));
    }
    let mut mask = BinaryMask::zeros(width, height)?;
    for i in 0..verts.len() {
        let a = vertex_pixel(verts[i], width, height);
        let b = vertex_pixel(verts[(i + 1) % verts.len()], width, height);
        for (x, y) in line_points(a, b) {
            mask.set(x as usize, y as usize, true);
        }
    }
    Ok(mask)
}

/// Pixels with intensity `>= threshold` become 1. Input must be gray.
pub fn binarize(img: &RasterImage, threshold: u8) -> Result<BinaryMask> {
    if img.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            actual: img.channels(),
        });
    }
    let bits = img.pixels().iter().map(|&v| u8::from(v >= threshold)).collect();
    Ok(BinaryMask {
        width: img.width(),
        height: img.height(),
        bits,
    })
}

pub fn crop(img: &RasterImage, rect: Rect) -> Result<RasterImage> {
    if rect.width == 0 || rect.height == 0 || rect.right() > img.width() || rect.bottom() > img.height() {
        return Err(Error::Bounds {
            x: rect.x,
            y: rect.y,
            width: rect.width,
            height: rect.height,
            image_width: img.width(),
            image_height: img.height(),
        });
    }
    let c = img.channels();
    let mut pixels = Vec::with_capacity(rect.area() * c);
    for y in rect.y..rect.bottom() {
        let start = (y * img.width() + rect.x) * c;
        pixels.extend_from_slice(&img.pixels()[start..start + rect.width * c]);
    }
    RasterImage::from_raw(rect.width, rect.height, c, pixels)
}

pub fn crop_mask(mask: &BinaryMask, rect: Rect) -> Result<BinaryMask> {
    let img = crop(&mask.to_image(), rect)?;
    binarize(&img, DEFAULT_THRESHOLD)
}

/// Places `img` at the top-left of a `width × height` canvas filled with `fill`.
pub fn pad_to(img: &RasterImage, width: usize, height: usize, fill: u8) -> Result<RasterImage> {
    if width < img.width() || height < img.height() {
        return Err(Error::Dimension { width, height });
    }
    let c = img.channels();
    let mut out = RasterImage::filled(width, height, c, fill)?;
    for y in 0..img.height() {
        let src = y * img.width() * c;
        let dst = y * width * c;
        out.pixels[dst..dst + img.width() * c].copy_from_slice(&img.pixels()[src..src + img.width() * c]);
    }
    Ok(out)
}

/// Per-axis resampling taps: `(source index, weight)` for every output index.
fn axis_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst <= src {
        // area average; dst == src reduces to the identity
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let lo = i as f64 * scale;
                let hi = (i + 1) as f64 * scale;
                let first = libm::floor(lo) as usize;
                let last = (libm::ceil(hi) as usize).min(src);
                (first..last)
                    .filter_map(|s| {
                        let overlap = hi.min((s + 1) as f64) - lo.max(s as f64);
                        (overlap > 0.0).then(|| (s, overlap / scale))
                    })
                    .collect()
            })
            .collect()
    } else {
        // bilinear with half-pixel centers, edge clamped
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = libm::floor(pos) as usize;
                let frac = pos - i0 as f64;
                if frac == 0.0 || i0 + 1 >= src {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - frac), (i0 + 1, frac)]
                }
            })
            .collect()
    }
}

#[inline]
pub(crate) fn round_intensity(v: f64) -> u8 {
    libm::floor(v + 0.5 + 1e-9).clamp(0.0, 255.0) as u8
}

/// Resamples to `width × height`: area average along shrinking axes, bilinear
/// along growing axes, rounded half-up. Same dimensions return a copy.
pub fn resize(img: &RasterImage, width: usize, height: usize) -> Result<RasterImage> {
    check_dims(width, height)?;
    if width == img.width() && height == img.height() {
        return Ok(img.clone());
    }
    let c = img.channels();
    let xt = axis_taps(img.width(), width);
    let yt = axis_taps(img.height(), height);

    let mut horiz = vec![0.0f64; width * img.height() * c];
    for y in 0..img.height() {
        for (ox, taps) in xt.iter().enumerate() {
            for ch in 0..c {
                let v: f64 = taps
                    .iter()
                    .map(|&(sx, w)| w * img.get(sx, y, ch) as f64)
                    .sum();
                horiz[(y * width + ox) * c + ch] = v;
            }
        }
    }
    let mut pixels = vec![0u8; width * height * c];
    for (oy, taps) in yt.iter().enumerate() {
        for ox in 0..width {
            for ch in 0..c {
                let v: f64 = taps
                    .iter()
                    .map(|&(sy, w)| w * horiz[(sy * width + ox) * c + ch])
                    .sum();
                pixels[(oy * width + ox) * c + ch] = round_intensity(v);
            }
        }
    }
    RasterImage::from_raw(width, height, c, pixels)
}

pub fn resize_mask(mask: &BinaryMask, width: usize, height: usize) -> Result<BinaryMask> {
    binarize(&resize(&mask.to_image(), width, height)?, DEFAULT_THRESHOLD)
}

/// Dilation by a `(2r + 1) × (2r + 1)` square (Chebyshev radius `r`), clipped
/// at the borders.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // separable: horizontal then vertical running max
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = u8::from((lo..=hi).any(|sx| mask.get(sx, y)));
        }
    }
    let mut bits = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            bits[y * w + x] = u8::from((lo..=hi).any(|sy| rows[sy * w + x] != 0));
        }
    }
    BinaryMask { width: w, height: h, bits }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension { width, height });
    }
    Ok(())
}

fn check_channels(channels: usize) -> Result<()> {
    if !matches!(channels, 1 | 3 | 4) {
        return Err(Error::ChannelMismatch {
            expected: 3,
            actual: channels,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_fill(poly: &PolygonRegion, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| poly.contains(x as f64 + 0.5, y as f64 + 0.5)).unwrap()
    }

    #[test]
    fn full_cover_rectangle() {
        let poly = PolygonRegion::rect(0.0, 0.0, 4.0, 4.0);
        let m = rasterize_polygon(&poly, 4, 4).unwrap();
        assert!(m.is_full());
    }

    #[test]
    fn polygon_outside_canvas() {
        let poly = PolygonRegion::rect(10.0, 10.0, 4.0, 4.0);
        assert!(rasterize_polygon(&poly, 4, 4).unwrap().is_empty());
        let poly = PolygonRegion::rect(-10.0, 0.0, 5.0, 4.0);
        assert!(rasterize_polygon(&poly, 4, 4).unwrap().is_empty());
    }

    #[test]
    fn right_triangle_matches_point_tests() {
        let poly = PolygonRegion::new(vec![[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]]).unwrap();
        let m = rasterize_polygon(&poly, 8, 8).unwrap();
        assert_eq!(m, brute_force_fill(&poly, 8, 8));
        // centers with x + y < 8 after the half-pixel shift: x + y <= 6
        assert_eq!(m.count_ones(), (1..=7).sum::<usize>());
        assert!(m.get(6, 0) && !m.get(7, 0) && !m.get(4, 3));
    }

    #[test]
    fn rasterize_errors() {
        assert_eq!(
            PolygonRegion::new(vec![[0.0, 0.0], [1.0, 1.0]]).unwrap_err(),
            Error::DegeneratePolygon(2)
        );
        let poly = PolygonRegion::rect(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(rasterize_polygon(&poly, 0, 4), Err(Error::Dimension { .. })));
    }

    #[test]
    fn binarize_examples() {
        let img = RasterImage::from_raw(4, 1, 1, vec![0, 100, 128, 200]).unwrap();
        assert_eq!(binarize(&img, 128).unwrap().values(), &[0, 0, 1, 1]);
        let white = RasterImage::filled(3, 3, 1, 255).unwrap();
        assert!(binarize(&white, 128).unwrap().is_full());
        let black = RasterImage::filled(3, 3, 1, 0).unwrap();
        assert!(binarize(&black, 128).unwrap().is_empty());
        let rgb = RasterImage::filled(3, 3, 3, 0).unwrap();
        assert_eq!(
            binarize(&rgb, 128).unwrap_err(),
            Error::ChannelMismatch { expected: 1, actual: 3 }
        );
    }

    fn gradient4() -> RasterImage {
        RasterImage::from_fn(4, 4, 1, |x, y, _| (y * 4 + x) as u8).unwrap()
    }

    #[test]
    fn crop_examples() {
        let img = gradient4();
        assert_eq!(crop(&img, img.full_rect()).unwrap(), img);
        assert_eq!(crop(&img, Rect::new(0, 0, 1, 1)).unwrap().pixels(), &[0]);
        assert_eq!(crop(&img, Rect::new(1, 2, 2, 2)).unwrap().pixels(), &[9, 10, 13, 14]);
        assert!(matches!(crop(&img, Rect::new(3, 3, 2, 1)), Err(Error::Bounds { .. })));
        assert!(matches!(crop(&img, Rect::new(0, 0, 0, 1)), Err(Error::Bounds { .. })));
    }

    #[test]
    fn pad_and_resize_examples() {
        let img = RasterImage::from_raw(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        let padded = pad_to(&img, 4, 4, 255).unwrap();
        assert_eq!(
            padded.pixels(),
            &[1, 2, 255, 255, 3, 4, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255]
        );
        assert!(matches!(pad_to(&img, 1, 4, 0), Err(Error::Dimension { .. })));

        let checker = RasterImage::from_raw(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(resize(&checker, 1, 1).unwrap().pixels(), &[128]);
        assert_eq!(resize(&checker, 2, 2).unwrap(), checker);
    }

    #[test]
    fn resize_upscale_is_bilinear() {
        let img = RasterImage::from_raw(2, 1, 1, vec![0, 100]).unwrap();
        // centers at 0.5*0.5-0.5 = -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        assert_eq!(resize(&img, 4, 1).unwrap().pixels(), &[0, 25, 75, 100]);
    }

    #[test]
    fn resize_downscale_fractional_area() {
        // 3 -> 2: out0 = p0 + p1/2 over 1.5, out1 = p1/2 + p2 over 1.5
        let img = RasterImage::from_raw(3, 1, 1, vec![30, 60, 90]).unwrap();
        assert_eq!(resize(&img, 2, 1).unwrap().pixels(), &[40, 80]);
    }

    #[test]
    fn luminance_rounds_half_up() {
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(0, 0, 0), 0);
        // 0.299 * 100 = 29.9
        assert_eq!(luminance(100, 0, 0), 30);
        let rgb = RasterImage::from_color(2, 2, &[10, 20, 30]).unwrap();
        assert_eq!(rgb.to_gray().pixels(), &[18; 4]);
    }

    /// Independent line oracle: minor coordinate from a float evaluation.
    fn line_oracle(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let mut pts = Vec::new();
        if dx.abs() >= dy.abs() {
            let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
            for x in lo..=hi {
                let y = if dx == 0 {
                    a.1
                } else {
                    libm::floor(a.1 as f64 + ((x - a.0) * dy) as f64 / dx as f64 + 0.5) as i64
                };
                pts.push((x, y));
            }
        } else {
            let (lo, hi) = (a.1.min(b.1), a.1.max(b.1));
            for y in lo..=hi {
                let x = libm::floor(a.0 as f64 + ((y - a.1) * dx) as f64 / dy as f64 + 0.5) as i64;
                pts.push((x, y));
            }
        }
        pts.sort();
        pts
    }

    #[test]
    fn lines_match_oracle_exhaustively() {
        for ax in -3..4 {
            for ay in -3..4 {
                for bx in -3..4 {
                    for by in -3..4 {
                        let mut got = line_points((ax, ay), (bx, by));
                        got.sort();
                        assert_eq!(got, line_oracle((ax, ay), (bx, by)), "{ax},{ay} -> {bx},{by}");
                    }
                }
            }
        }
    }

    #[test]
    fn stroke_of_full_canvas_rect_is_border() {
        let poly = PolygonRegion::rect(0.0, 0.0, 6.0, 5.0);
        let m = stroke_polygon(&poly, 6, 5).unwrap();
        let border = BinaryMask::from_fn(6, 5, |x, y| x == 0 || y == 0 || x == 5 || y == 4).unwrap();
        assert_eq!(m, border);
    }

    #[test]
    fn dilation_of_square() {
        let mut m = BinaryMask::zeros(9, 9).unwrap();
        for y in 3..6 {
            for x in 3..6 {
                m.set(x, y, true);
            }
        }
        let d = dilate(&m, 1);
        assert_eq!(d.bounding_rect(), Some(Rect::new(2, 2, 5, 5)));
        assert_eq!(d.count_ones(), 25);
        // clipped at the corner
        let mut c = BinaryMask::zeros(4, 4).unwrap();
        c.set(0, 0, true);
        assert_eq!(dilate(&c, 2).count_ones(), 9);
    }

    fn arb_gray() -> impl Strategy<Value = RasterImage> {
        (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3), Just(4)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |px| RasterImage::from_raw(w, h, c, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn crop_inverts_pad(img in arb_gray(), extra_w in 0usize..6, extra_h in 0usize..6, fill in any::<u8>()) {
            let padded = pad_to(&img, img.width() + extra_w, img.height() + extra_h, fill).unwrap();
            prop_assert_eq!(crop(&padded, img.full_rect()).unwrap(), img);
        }

        #[test]
        fn resize_same_dims_is_identity(img in arb_gray()) {
            prop_assert_eq!(resize(&img, img.width(), img.height()).unwrap(), img);
        }

        #[test]
        fn binarize_monotone_in_threshold(px in proptest::collection::vec(any::<u8>(), 16), lo in any::<u8>(), hi in any::<u8>()) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let img = RasterImage::from_raw(4, 4, 1, px).unwrap();
            let a = binarize(&img, lo).unwrap();
            let b = binarize(&img, hi).unwrap();
            prop_assert!(b.is_subset_of(&a));
        }

        #[test]
        fn dilation_matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 64), r in 0usize..4) {
            let m = BinaryMask::from_fn(8, 8, |x, y| bits[y * 8 + x]).unwrap();
            let brute = BinaryMask::from_fn(8, 8, |x, y| {
                (0..8usize).any(|sy| (0..8usize).any(|sx| {
                    m.get(sx, sy) && sx.abs_diff(x) <= r && sy.abs_diff(y) <= r
                }))
            }).unwrap();
            prop_assert_eq!(dilate(&m, r), brute);
        }
    }
}
