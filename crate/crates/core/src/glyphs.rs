//! Built-in 5×7 bitmap font and upright text rendering.
//!
//! Covers `A–Z` (lowercase is folded to uppercase), `0–9`, space and
//! `! ? - . '`. Anything else renders as a hollow box and is reported back.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{RasterImage, Rect};

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;
/// Horizontal advance in glyph cells (one blank column between glyphs).
pub const ADVANCE: usize = GLYPH_WIDTH + 1;

type Bitmap = [&'static str; GLYPH_HEIGHT];

const SUBSTITUTE: Bitmap = ["#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"];

const FONT: &[(char, Bitmap)] = &[
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('!', ["..#..", "..#..", "..#..", "..#..", "..#..", ".....", "..#.."]),
    ('?', [".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."]),
    ('-', [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ('.', [".....", ".....", ".....", ".....", ".....", ".##..", ".##.."]),
    ('\'', ["..#..", "..#..", ".#...", ".....", ".....", ".....", "....."]),
    (' ', [".....", ".....", ".....", ".....", ".....", ".....", "....."]),
];

/// A glyph cell: `cell[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glyph {
    pub ch: char,
    pub cells: [[bool; GLYPH_WIDTH]; GLYPH_HEIGHT],
}

impl Glyph {
    fn from_bitmap(ch: char, bitmap: &Bitmap) -> Self {
        let mut cells = [[false; GLYPH_WIDTH]; GLYPH_HEIGHT];
        for (r, row) in bitmap.iter().enumerate() {
            for (c, b) in row.bytes().enumerate() {
                cells[r][c] = b == b'#';
            }
        }
        Self { ch, cells }
    }

    pub fn ink(&self) -> usize {
        self.cells.iter().flatten().filter(|&&b| b).count()
    }
}

/// Looks up a glyph; `None` when the character is not covered.
pub fn glyph(ch: char) -> Option<Glyph> {
    let key = ch.to_ascii_uppercase();
    FONT.iter().find(|(c, _)| *c == key).map(|(c, b)| Glyph::from_bitmap(*c, b))
}

pub fn substitute_glyph() -> Glyph {
    Glyph::from_bitmap('\u{fffd}', &SUBSTITUTE)
}

/// Every covered glyph with visible ink (space excluded).
pub fn inked_glyphs() -> Vec<Glyph> {
    FONT.iter()
        .filter(|(c, _)| *c != ' ')
        .map(|(c, b)| Glyph::from_bitmap(*c, b))
        .collect()
}

/// Glyph cells for a string plus the characters that had to be substituted.
pub fn layout(text: &str) -> (Vec<Glyph>, Vec<char>) {
    let mut missing = Vec::new();
    let glyphs = text
        .chars()
        .map(|c| {
            glyph(c).unwrap_or_else(|| {
                missing.push(c);
                substitute_glyph()
            })
        })
        .collect();
    (glyphs, missing)
}

/// Size of a glyph run in cells: `(width, height)`.
pub fn cell_extent(n: usize) -> (usize, usize) {
    if n == 0 {
        (0, 0)
    } else {
        (n * ADVANCE - 1, GLYPH_HEIGHT)
    }
}

/// Result of rendering: the image plus characters drawn as substitutes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedText {
    pub image: RasterImage,
    pub substituted: Vec<char>,
}

/// Draws `text` in black, upright, scaled (uniformly, possibly fractionally)
/// to fit `region` and centered in it, onto a white `width × height` canvas.
/// Each output pixel takes the glyph cell under its center.
pub fn render_text(text: &str, region: Rect, width: usize, height: usize) -> Result<RenderedText> {
    if region.width == 0 || region.height == 0 {
        return Err(Error::DegenerateRegion("text region has no area".into()));
    }
    let mut image = RasterImage::filled(width, height, 3, 255)?;
    let (glyphs, substituted) = layout(text);
    if !substituted.is_empty() {
        log::warn!("no glyph for {:?}; drew substitution boxes", substituted);
    }
    let (cw, ch) = cell_extent(glyphs.len());
    if cw == 0 {
        return Ok(RenderedText { image, substituted });
    }
    let scale = (region.width as f64 / cw as f64).min(region.height as f64 / ch as f64);
    let (tw, th) = (cw as f64 * scale, ch as f64 * scale);
    let left = region.x as f64 + (region.width as f64 - tw) / 2.0;
    let top = region.y as f64 + (region.height as f64 - th) / 2.0;
    let x0 = libm::floor(left).max(0.0) as usize;
    let y0 = libm::floor(top).max(0.0) as usize;
    let x1 = (libm::ceil(left + tw) as usize).min(width);
    let y1 = (libm::ceil(top + th) as usize).min(height);
    for py in y0..y1 {
        let gy = (py as f64 + 0.5 - top) / scale;
        if gy < 0.0 || gy >= ch as f64 {
            continue;
        }
        let row = gy as usize;
        for px in x0..x1 {
            let gx = (px as f64 + 0.5 - left) / scale;
            if gx < 0.0 || gx >= cw as f64 {
                continue;
            }
            let cell = gx as usize;
            let (gi, col) = (cell / ADVANCE, cell % ADVANCE);
            if col < GLYPH_WIDTH && glyphs[gi].cells[row][col] {
                image.pixel_mut(px, py).copy_from_slice(&[0, 0, 0]);
            }
        }
    }
    Ok(RenderedText { image, substituted })
}
