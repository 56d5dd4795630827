//! Procedural manga-like pages with one annotated sound effect each.
//!
//! Words from the built-in font are drawn under a random rotation, shear and
//! scale, thickened by a random amount and outlined in white, on light
//! textured backgrounds (tone gradient, screentone patch, speed lines, panel
//! frame). Output follows the layout documented in [`crate::sources`].

use std::path::Path;

use mangasfx_core::dataset::SplitTable;
use mangasfx_core::glyphs::{cell_extent, layout, ADVANCE, GLYPH_WIDTH};
use mangasfx_core::raster::{dilate, line_points, BinaryMask, PolygonRegion, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::SyntheticConfig;
use crate::error::Result;
use crate::io;
use crate::sources::{MaskAnnotation, TextAnnotation, MASK_FILE, SPLIT_FILE, TEXT_FILE};

pub const WORDS: &[&str] = &[
    "BAM", "BOOM", "DON", "DOKAN", "GOGOGO", "ZAWA", "KRAK", "WHAM", "POW", "THUD", "BANG", "ZOOM", "SNAP", "CRASH", "DOOM", "ZAP",
    "GASHAN", "WHOOSH", "DODODO", "PAN", "SWISH", "CLANG", "RUMBLE", "ZZZ", "BOOM!", "HUH?", "KA-BOOM", "DOKI", "JAAN", "BURN",
];

const MARGIN: f64 = 16.0;
const OUTLINE_PX: usize = 2;

/// Affine map from glyph-cell coordinates to page pixels.
#[derive(Debug, Clone, Copy)]
struct Placement {
    center: [f64; 2],
    /// Row-major 2×2.
    m: [f64; 4],
    half: [f64; 2],
}

impl Placement {
    fn forward(&self, u: f64, v: f64) -> [f64; 2] {
        let (a, b) = (u - self.half[0], v - self.half[1]);
        [self.center[0] + self.m[0] * a + self.m[1] * b, self.center[1] + self.m[2] * a + self.m[3] * b]
    }

    fn inverse(&self, x: f64, y: f64) -> [f64; 2] {
        let det = self.m[0] * self.m[3] - self.m[1] * self.m[2];
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        [
            (self.m[3] * dx - self.m[1] * dy) / det + self.half[0],
            (-self.m[2] * dx + self.m[0] * dy) / det + self.half[1],
        ]
    }
}

/// One generated page.
#[derive(Debug, Clone)]
pub struct SyntheticPage {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub text: String,
    pub polygon: PolygonRegion,
}

fn background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    let base = rng.random_range(222.0..250.0);
    let slope = rng.random_range(-12.0..12.0) / h as f64;
    let mut img = RasterImage::from_fn(w, h, 3, |_, y, _| (base + slope * y as f64).clamp(0.0, 255.0) as u8).unwrap();
    // screentone patch
    let (tw, th) = (rng.random_range(w / 6..w / 2), rng.random_range(h / 6..h / 2));
    let (tx, ty) = (rng.random_range(0..w - tw), rng.random_range(0..h - th));
    let pitch = rng.random_range(3..6);
    let tone = rng.random_range(165..195);
    for y in ty..ty + th {
        for x in tx..tx + tw {
            if x % pitch < 2 && y % pitch < 2 {
                img.pixel_mut(x, y).fill(tone);
            }
        }
    }
    // speed lines
    let n = rng.random_range(0..8);
    let focus = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
    for _ in 0..n {
        let end = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
        let shade = rng.random_range(150..190);
        for (x, y) in line_points(focus, end) {
            if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                img.pixel_mut(x as usize, y as usize).fill(shade);
            }
        }
    }
    // panel frame
    for y in 0..h {
        for x in 0..w {
            let d = x.min(y).min(w - 1 - x).min(h - 1 - y);
            if (6..8).contains(&d) {
                img.pixel_mut(x, y).fill(40);
            }
        }
    }
    img
}

/// Draws one page. Deterministic in `rng`.
pub fn synth_page(rng: &mut ChaCha8Rng, width: usize, height: usize) -> SyntheticPage {
    let word = WORDS[rng.random_range(0..WORDS.len())];
    let mut image = background(rng, width, height);
    let (glyphs, _) = layout(word);
    let (cw, ch) = cell_extent(glyphs.len());
    let theta: f64 = rng.random_range(-0.35..0.35);
    let shear: f64 = rng.random_range(-0.3..0.3);
    let (c, s) = (theta.cos(), theta.sin());
    // rotation ∘ shear, unit scale
    let unit = [c, c * shear - s, s, s * shear + c];
    let reach = |m: &[f64; 4]| {
        let hx = (m[0] * cw as f64).abs() / 2.0 + (m[1] * ch as f64).abs() / 2.0;
        let hy = (m[2] * cw as f64).abs() / 2.0 + (m[3] * ch as f64).abs() / 2.0;
        (hx, hy)
    };
    let (ux, uy) = reach(&unit);
    let fit = ((width as f64 / 2.0 - MARGIN - 4.0) / (ux + 1.0)).min((height as f64 / 2.0 - MARGIN - 4.0) / (uy + 1.0));
    let scale = rng.random_range(3.0..7.0f64).min(fit);
    let m = unit.map(|v| v * scale);
    let (hx, hy) = reach(&m);
    let (pad_x, pad_y) = (hx + scale + MARGIN, hy + scale + MARGIN);
    let center = [
        rng.random_range(pad_x..(width as f64 - pad_x).max(pad_x + 1e-9)),
        rng.random_range(pad_y..(height as f64 - pad_y).max(pad_y + 1e-9)),
    ];
    let place = Placement {
        center,
        m,
        half: [cw as f64 / 2.0, ch as f64 / 2.0],
    };
    let ink = BinaryMask::from_fn(width, height, |x, y| {
        let [u, v] = place.inverse(x as f64 + 0.5, y as f64 + 0.5);
        if u < 0.0 || v < 0.0 || u >= cw as f64 || v >= ch as f64 {
            return false;
        }
        let cell = u as usize;
        let (g, col) = (cell / ADVANCE, cell % ADVANCE);
        col < GLYPH_WIDTH && glyphs[g].cells[v as usize][col]
    })
    .unwrap();
    let mask = dilate(&ink, rng.random_range(0..2));
    let outline = dilate(&mask, OUTLINE_PX).minus(&mask).unwrap();
    let fill = rng.random_range(0..30);
    for y in 0..height {
        for x in 0..width {
            if mask.get(x, y) {
                image.pixel_mut(x, y).fill(fill);
            } else if outline.get(x, y) {
                image.pixel_mut(x, y).fill(255);
            }
        }
    }
    let (lo_u, lo_v, hi_u, hi_v) = (-1.0, -1.0, cw as f64 + 1.0, ch as f64 + 1.0);
    let polygon = PolygonRegion::new(vec![
        place.forward(lo_u, lo_v),
        place.forward(hi_u, lo_v),
        place.forward(hi_u, hi_v),
        place.forward(lo_u, hi_v),
    ])
    .unwrap();
    SyntheticPage {
        image,
        mask,
        text: word.to_string(),
        polygon,
    }
}

pub fn train_title(i: usize) -> String {
    format!("Synthetic Train {i:02}")
}

pub fn test_title(i: usize) -> String {
    format!("Synthetic Test {i:02}")
}

/// Writes `train_samples + test_samples` pages with annotations under `dir`
/// and returns the split table. Page `i` uses ChaCha8 stream `i` of `seed`.
pub fn generate(dir: &Path, cfg: &SyntheticConfig, seed: u64) -> Result<SplitTable> {
    let total = cfg.train_samples + cfg.test_samples;
    let entries: Vec<(TextAnnotation, MaskAnnotation)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let w = rng.random_range(cfg.min_page..=cfg.max_page);
            let h = rng.random_range(cfg.min_page..=cfg.max_page);
            let page = synth_page(&mut rng, w, h);
            let (title, folder) = if i < cfg.train_samples {
                let t = i % cfg.train_titles;
                (train_title(t), format!("train{t:02}"))
            } else {
                let t = (i - cfg.train_samples) % cfg.test_titles;
                (test_title(t), format!("test{t:02}"))
            };
            let page_id = format!("{folder}/p{i:05}");
            io::save_image(&crate::sources::page_path(dir, &page_id), &page.image)?;
            let mask_rel = Path::new("masks").join(format!("{page_id}_0.png"));
            io::save_mask(&dir.join(&mask_rel), &page.mask)?;
            Ok((
                TextAnnotation {
                    page_id: page_id.clone(),
                    title,
                    text: page.text,
                    polygon: page.polygon,
                },
                MaskAnnotation { page_id, mask: mask_rel },
            ))
        })
        .collect::<Result<_>>()?;
    let (texts, masks): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
    io::write_jsonl(&dir.join(TEXT_FILE), &texts)?;
    io::write_jsonl(&dir.join(MASK_FILE), &masks)?;
    let table = SplitTable {
        train: (0..cfg.train_titles.min(cfg.train_samples.max(1))).map(train_title).collect(),
        test: (0..cfg.test_titles.min(cfg.test_samples.max(1))).map(test_title).collect(),
    };
    io::write_json(&dir.join(SPLIT_FILE), &table)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mangasfx_core::raster::rasterize_polygon;

    #[test]
    fn page_invariants() {
        for i in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            rng.set_stream(i);
            let page = synth_page(&mut rng, 320, 340);
            assert!(!page.mask.is_empty(), "page {i}");
            let inside = rasterize_polygon(&page.polygon, 320, 340).unwrap();
            assert!(page.mask.is_subset_of(&inside), "page {i}: ink leaks out of the polygon");
            for y in 0..340 {
                for x in 0..320 {
                    if page.mask.get(x, y) {
                        assert!(page.image.pixel(x, y)[0] < 30);
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig {
            train_samples: 3,
            test_samples: 2,
            train_titles: 2,
            test_titles: 1,
            min_page: 310,
            max_page: 330,
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ta = generate(a.path(), &cfg, 5).unwrap();
        generate(b.path(), &cfg, 5).unwrap();
        assert_eq!(ta.train.len(), 2);
        assert_eq!(ta.test.len(), 1);
        for f in [TEXT_FILE, MASK_FILE, "pages/train01/p00001.png", "masks/test00/p00004_0.png"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
