//! PNG and JSON-lines helpers.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use mangasfx_core::raster::{binarize, BinaryMask, RasterImage, DEFAULT_THRESHOLD};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn from_dynamic(img: DynamicImage) -> Result<RasterImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        DynamicImage::ImageLuma8(b) => RasterImage::from_raw(w, h, 1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => RasterImage::from_raw(w, h, 3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => RasterImage::from_raw(w, h, 4, b.into_raw()),
        other if other.color().has_alpha() => RasterImage::from_raw(w, h, 4, other.into_rgba8().into_raw()),
        other if other.color().has_color() => RasterImage::from_raw(w, h, 3, other.into_rgb8().into_raw()),
        other => RasterImage::from_raw(w, h, 1, other.into_luma8().into_raw()),
    };
    Ok(out?)
}

fn to_dynamic(img: &RasterImage) -> Result<DynamicImage> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw = img.pixels().to_vec();
    let bad = || mangasfx_core::Error::BufferLength {
        expected: img.width() * img.height() * img.channels(),
        actual: img.pixels().len(),
    };
    Ok(match img.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, raw).ok_or_else(bad)?),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).ok_or_else(bad)?),
        4 => DynamicImage::ImageRgba8(image::RgbaImage::from_raw(w, h, raw).ok_or_else(bad)?),
        c => {
            return Err(mangasfx_core::Error::ChannelMismatch { expected: 3, actual: c }.into());
        }
    })
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    from_dynamic(img)
}

pub fn save_image(path: &Path, img: &RasterImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

/// Masks are stored as 1-channel PNGs with values {0, 255}.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    Ok(binarize(&load_image(path)?.to_gray(), DEFAULT_THRESHOLD)?)
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    save_image(path, &mask.to_image())
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    to_dynamic(img)?
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: "<memory>".into(),
        source,
    })?;
    from_dynamic(img)
}

/// `(width, height)` without decoding pixels.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((w as usize, h as usize))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(path.display().to_string(), e))?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    buf.push(b'\n');
    write_bytes(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_keeps_channels() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3, 4] {
            let img = RasterImage::from_fn(7, 5, c, |x, y, k| (x * 31 + y * 17 + k * 5) as u8).unwrap();
            let p = dir.path().join(format!("c{c}.png"));
            save_image(&p, &img).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
            assert_eq!(image_dimensions(&p).unwrap(), (7, 5));
            assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
        }
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(9, 4, |x, y| (x + y) % 3 == 0).unwrap();
        let p = dir.path().join("m.png");
        save_mask(&p, &m).unwrap();
        assert_eq!(load_image(&p).unwrap().channels(), 1);
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_image(Path::new("/nonexistent/page.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/page.png"));
    }
}
