//! FID and NED, plus the desk-scale feature extractor and recognizer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::glyphs::{inked_glyphs, Glyph, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::raster::RasterImage;

/// Negative eigenvalues below this (in magnitude) are clamped silently.
pub const EIGEN_WARN_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov)
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::TooFewSamples(features.len()));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::Shape {
            left: format!("feature dim {d}"),
            right: format!("feature dim {}", bad.len()),
        });
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (f[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianStats {
        mean,
        cov,
        count: features.len(),
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues with rounding noise or small negative parts set to zero.
fn clamped_eigen(m: &DMatrix<f64>, what: &str) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let noise = top * f64::EPSILON * m.nrows() as f64;
    for v in eig.eigenvalues.iter_mut() {
        if *v < -EIGEN_WARN_THRESHOLD {
            log::warn!("{what}: clamped eigenvalue {v:e} to 0");
        }
        if *v <= noise {
            *v = 0.0;
        }
    }
    eig
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m, "covariance");
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| libm::sqrt(*v)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians:
/// `|μa − μb|² + Tr Σa + Tr Σb − 2 Tr (Σa^½ Σb Σa^½)^½`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            left: format!("stats dim {}", a.dim()),
            right: format!("stats dim {}", b.dim()),
        });
    }
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let root_a = psd_sqrt(&sa);
    let product = &root_a * &sb * &root_a;
    let cross = clamped_eigen(&product, "covariance product")
        .eigenvalues
        .iter()
        .map(|v| libm::sqrt(*v))
        .sum::<f64>();
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let fid = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !fid.is_finite() {
        return Err(Error::NonFinite("frechet distance".into()));
    }
    Ok(fid.max(0.0))
}

/// FID between two feature sets.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized edit similarity over NFC code points; empty vs empty is 1.
pub fn ned_pair(pred: &str, gt: &str) -> f64 {
    let p: Vec<char> = pred.nfc().collect();
    let g: Vec<char> = gt.nfc().collect();
    let longest = p.len().max(g.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&p, &g) as f64 / longest as f64
}

/// Fixed-length image embedding.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, image: &RasterImage) -> Result<Vec<f64>>;
}

/// 64-bin luminance histogram (fractions) followed by the dark-pixel
/// fraction of each 2×2 block (row-major). `d = 68`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HistogramExtractor;

pub const HISTOGRAM_BINS: usize = 64;
pub const INK_THRESHOLD: u8 = 128;

impl FeatureExtractor for HistogramExtractor {
    fn name(&self) -> &str {
        "histogram68"
    }

    fn dim(&self) -> usize {
        HISTOGRAM_BINS + 4
    }

    fn extract(&self, image: &RasterImage) -> Result<Vec<f64>> {
        let (w, h) = (image.width(), image.height());
        let mut out = vec![0.0; self.dim()];
        let mut ink = [0usize; 4];
        let mut area = [0usize; 4];
        let (mx, my) = (w / 2, h / 2);
        for y in 0..h {
            for x in 0..w {
                let l = image.luminance_at(x, y);
                out[l as usize * HISTOGRAM_BINS / 256] += 1.0;
                let block = usize::from(y >= my) * 2 + usize::from(x >= mx);
                area[block] += 1;
                if l < INK_THRESHOLD {
                    ink[block] += 1;
                }
            }
        }
        let total = (w * h) as f64;
        out[..HISTOGRAM_BINS].iter_mut().for_each(|v| *v /= total);
        for b in 0..4 {
            if area[b] > 0 {
                out[HISTOGRAM_BINS + b] = ink[b] as f64 / area[b] as f64;
            }
        }
        Ok(out)
    }
}

/// Image → text.
pub trait RecognizerBackend {
    fn name(&self) -> &str;
    fn recognize(&self, image: &RasterImage) -> Result<String>;
}

/// Reads dark glyphs of the built-in font: columns with ink are split into
/// runs, and each run is matched against every template resampled to the
/// run's box.
#[derive(Debug, Clone)]
pub struct TemplateRecognizer {
    templates: Vec<(Glyph, [usize; 4])>,
    /// Runs with fewer dark pixels are dropped as specks.
    pub min_ink: usize,
}

impl Default for TemplateRecognizer {
    fn default() -> Self {
        let templates = inked_glyphs()
            .into_iter()
            .map(|g| {
                let mut b = [GLYPH_WIDTH, GLYPH_HEIGHT, 0, 0];
                for r in 0..GLYPH_HEIGHT {
                    for c in 0..GLYPH_WIDTH {
                        if g.cells[r][c] {
                            b = [b[0].min(c), b[1].min(r), b[2].max(c + 1), b[3].max(r + 1)];
                        }
                    }
                }
                (g, b)
            })
            .collect();
        Self { templates, min_ink: 3 }
    }
}

impl TemplateRecognizer {
    fn score(&self, dark: &[bool], w: usize, x0: usize, y0: usize, x1: usize, y1: usize, glyph: &Glyph, b: [usize; 4]) -> f64 {
        let (gw, gh) = (b[2] - b[0], b[3] - b[1]);
        let (bw, bh) = ((x1 - x0) as f64, (y1 - y0) as f64);
        let mut dist = 0.0;
        for r in 0..gh {
            let ya = y0 + (r as f64 * bh / gh as f64) as usize;
            let yb = (y0 + ((r + 1) as f64 * bh / gh as f64) as usize).max(ya + 1).min(y1);
            for c in 0..gw {
                let xa = x0 + (c as f64 * bw / gw as f64) as usize;
                let xb = (x0 + ((c + 1) as f64 * bw / gw as f64) as usize).max(xa + 1).min(x1);
                let mut on = 0usize;
                for y in ya..yb {
                    on += dark[y * w + xa..y * w + xb].iter().filter(|&&d| d).count();
                }
                let frac = on as f64 / ((yb - ya) * (xb - xa)) as f64;
                let want = if glyph.cells[b[1] + r][b[0] + c] { 1.0 } else { 0.0 };
                dist += libm::fabs(frac - want);
            }
        }
        let aspect = libm::fabs(libm::log((bw / bh) / (gw as f64 / gh as f64)));
        dist / (gw * gh) as f64 + 0.1 * aspect
    }
}

impl RecognizerBackend for TemplateRecognizer {
    fn name(&self) -> &str {
        "template"
    }

    fn recognize(&self, image: &RasterImage) -> Result<String> {
        let (w, h) = (image.width(), image.height());
        let dark: Vec<bool> = (0..w * h).map(|i| image.luminance_at(i % w, i / w) < INK_THRESHOLD).collect();
        let col_has_ink: Vec<bool> = (0..w).map(|x| (0..h).any(|y| dark[y * w + x])).collect();
        let mut text = String::new();
        let mut x = 0;
        while x < w {
            if !col_has_ink[x] {
                x += 1;
                continue;
            }
            let x0 = x;
            while x < w && col_has_ink[x] {
                x += 1;
            }
            let x1 = x;
            let rows: Vec<usize> = (0..h).filter(|&y| dark[y * w + x0..y * w + x1].iter().any(|&d| d)).collect();
            let (y0, y1) = (rows[0], rows[rows.len() - 1] + 1);
            let ink: usize = (y0..y1).map(|y| dark[y * w + x0..y * w + x1].iter().filter(|&&d| d).count()).sum();
            if ink < self.min_ink {
                continue;
            }
            let best = self
                .templates
                .iter()
                .map(|(g, b)| (self.score(&dark, w, x0, y0, x1, y1, g, *b), g.ch))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c)
                .unwrap_or('?');
            text.push(best);
        }
        Ok(text)
    }
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub fid: f64,
    pub ned: f64,
    pub sample_count: usize,
    pub config_digest: String,
    /// Test samples without a generated image (lenient mode only).
    #[serde(default)]
    pub skipped: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if !(self.fid.is_finite() && self.fid >= 0.0) {
            return Err(Error::OutOfRange(format!("fid {}", self.fid)));
        }
        if !(0.0..=1.0).contains(&self.ned) {
            return Err(Error::OutOfRange(format!("ned {}", self.ned)));
        }
        if self.variant.is_empty() {
            return Err(Error::Config("report without a variant name".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphs::render_text;
    use crate::raster::Rect;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_stats(mean: &[f64], var: &[f64]) -> GaussianStats {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var[i];
        }
        GaussianStats {
            mean: mean.to_vec(),
            cov,
            count: 2,
        }
    }

    #[test]
    fn fit_examples() {
        let s = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(s.mean, vec![1.0, 0.0]);
        assert_eq!(s.cov, vec![2.0, 0.0, 0.0, 0.0]);
        let same = fit_gaussian(&[vec![3.0, -1.0], vec![3.0, -1.0]]).unwrap();
        assert!(same.cov.iter().all(|&v| v == 0.0));
        assert_eq!(fit_gaussian(&[vec![1.0]]).unwrap_err(), Error::TooFewSamples(1));
        assert!(matches!(fit_gaussian(&[vec![1.0], vec![1.0, 2.0]]), Err(Error::Shape { .. })));
    }

    #[test]
    fn fit_mean_matches_plain_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| (0..5).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let s = fit_gaussian(&xs).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for x in &xs {
                acc += x[j];
            }
            assert!((s.mean[j] - acc / 100.0).abs() < 1e-10);
        }
        for i in 0..5 {
            for j in 0..5 {
                assert!((s.cov[i * 5 + j] - s.cov[j * 5 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frechet_examples() {
        let a = diag_stats(&[0.0], &[1.0]);
        let b = diag_stats(&[1.0], &[1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let i = diag_stats(&[0.0, 0.0], &[1.0, 1.0]);
        let four = diag_stats(&[0.0, 0.0], &[4.0, 4.0]);
        assert!((frechet_distance(&i, &four).unwrap() - 2.0).abs() < 1e-12);
        assert!(frechet_distance(&i, &i).unwrap() < 1e-8);
        assert!(matches!(frechet_distance(&a, &i), Err(Error::Shape { .. })));
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (d, n) in [(4, 30), (8, 5), (68, 40)] {
            let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
            };
            let (xa, xb) = (mk(&mut rng), mk(&mut rng));
            let (a, b) = (fit_gaussian(&xa).unwrap(), fit_gaussian(&xb).unwrap());
            assert!(frechet_distance(&a, &a).unwrap() <= 1e-8, "d={d} n={n}");
            let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
            assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        }
    }

    #[test]
    fn ned_examples() {
        assert_eq!(ned_pair("ドン", "ドン"), 1.0);
        assert!((ned_pair("abc", "abd") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ned_pair("", "abc"), 0.0);
        assert_eq!(ned_pair("", ""), 1.0);
        // composed vs decomposed ド
        assert_eq!(ned_pair("\u{30c9}", "\u{30c8}\u{3099}"), 1.0);
    }

    proptest! {
        #[test]
        fn ned_bounds_and_symmetry(a in "[abcド]{0,8}", b in "[abcド]{0,8}") {
            let v = ned_pair(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, ned_pair(&b, &a));
            prop_assert_eq!(ned_pair(&a, &a), 1.0);
        }
    }

    #[test]
    fn histogram_features() {
        let ex = HistogramExtractor;
        let white = RasterImage::filled(4, 4, 3, 255).unwrap();
        let f = ex.extract(&white).unwrap();
        assert_eq!(f.len(), 68);
        assert_eq!(f[63], 1.0);
        assert!(f[64..].iter().all(|&v| v == 0.0));
        let left_black = RasterImage::from_fn(4, 4, 3, |x, _, _| if x < 2 { 0 } else { 255 }).unwrap();
        let g = ex.extract(&left_black).unwrap();
        assert_eq!((g[0], g[63]), (0.5, 0.5));
        assert_eq!(&g[64..], &[1.0, 0.0, 1.0, 0.0]);
        let tiny = RasterImage::filled(1, 1, 1, 0).unwrap();
        assert_eq!(&ex.extract(&tiny).unwrap()[64..], &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn template_recognizer_reads_rendered_words() {
        let rec = TemplateRecognizer::default();
        for word in ["BAM", "DOKAN", "ZZZ", "GOGOGO", "WHAM!", "CRASH", "BOOM", "0123456789", "QUIJXVYK"] {
            let rendered = render_text(word, Rect::new(2, 4, 180, 30), 184, 38).unwrap();
            assert_eq!(rec.recognize(&rendered.image).unwrap(), word);
        }
        let blank = RasterImage::filled(10, 10, 3, 255).unwrap();
        assert_eq!(rec.recognize(&blank).unwrap(), "");
    }

    #[test]
    fn report_validation() {
        let mut r = MetricReport {
            variant: "full".into(),
            fid: 1.0,
            ned: 0.5,
            sample_count: 3,
            config_digest: "abc".into(),
            skipped: 0,
        };
        assert!(r.validate().is_ok());
        r.ned = 1.5;
        assert!(r.validate().is_err());
    }
}
