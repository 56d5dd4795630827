//! Acceptance suite: one `ACCEPTANCE <name>: PASS|FAIL|SKIP` line per
//! criterion. Runs without the libtest harness so every line is printed;
//! exits nonzero when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mangasfx::config::{PipelineConfig, Source, Variant};
use mangasfx::dataset::{filter_min_size, split_by_title};
use mangasfx::pipeline::{cmd_ablate, cmd_build_dataset, cmd_evaluate, cmd_generate, cmd_train, Run};
use mangasfx::sources::AnnotationRecord;
use mangasfx_core::composite::{alpha_over, inpaint_reference, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use mangasfx_core::dataset::{passes_min_size, Split, SplitTable};
use mangasfx_core::flow::toy::{ToyConfig, ToyDenoiser};
use mangasfx_core::flow::{fm_loss, fm_loss_and_grad, sample, velocity_target, Condition, DenoiserBackend, LatentTensor, NoiseSchedule, TrainableBackend};
use mangasfx_core::incontext::{concat_h, split_h};
use mangasfx_core::metrics::{fid, frechet_distance, ned_pair, GaussianStats};
use mangasfx_core::raster::{BinaryMask, PolygonRegion, RasterImage};
use mangasfx_core::rgba::{convert_reference, RgbaLayer, Style};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> RasterImage {
    RasterImage::from_fn(w, h, c, |_, _, _| rng.random()).unwrap()
}

// ---------------------------------------------------------------- criteria

fn concat_inversion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let h = rng.random_range(1..40);
        let c = [1, 3, 4][rng.random_range(0..3)];
        let (wa, wb) = (rng.random_range(1..40), rng.random_range(1..40));
        let a = random_image(&mut rng, wa, h, c);
        let b = random_image(&mut rng, wb, h, c);
        let canvas = concat_h(&a, &b).map_err(|e| format!("pair {i}: {e}"))?;
        // layout oracle: column x of the canvas is column x of a, then of b
        let img = canvas.image();
        for y in 0..h {
            for x in 0..img.width() {
                let want = if x < a.width() { a.pixel(x, y) } else { b.pixel(x - a.width(), y) };
                ensure(img.pixel(x, y) == want, || format!("pair {i}: canvas pixel ({x},{y})"))?;
            }
        }
        let (l, r) = split_h(&canvas).map_err(|e| format!("pair {i}: {e}"))?;
        ensure(l == a && r == b, || format!("pair {i}: split differs"))?;
    }
    Ok("1000 random pairs bit-exact".into())
}

fn gradient_check() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let lat = rng.random_range(1..5);
        let condc = rng.random_range(0..4);
        let (h, w) = (rng.random_range(1..4), rng.random_range(1..5));
        let cfg = ToyConfig {
            latent_channels: lat,
            cond_channels: condc,
            hidden: rng.random_range(2..6),
            rank: rng.random_range(0..3),
            lora_scale: rng.random_range(0.5..2.0),
            train_base: true,
            init_seed: i,
        };
        let mut model = ToyDenoiser::new(cfg).map_err(|e| e.to_string())?;
        model.perturb_adapters(&mut rng, 0.3);
        let x0 = LatentTensor::randn((lat, h, w), &mut rng);
        let z = LatentTensor::randn((lat, h, w), &mut rng);
        let t: f64 = rng.random_range(0.05..0.95);
        let x_t = mangasfx_core::flow::interpolate(&x0, &z, t).unwrap();
        let cond = Condition {
            latent: LatentTensor::randn((condc, h, w), &mut rng),
            prompt: String::new(),
        };
        let target = velocity_target(&x0, &z).unwrap();
        let mut lossf = |p: &LatentTensor| fm_loss_and_grad(p, &target, 1.0);
        let (_, analytic) = model.value_and_grad(&x_t, t, &cond, &mut lossf).map_err(|e| e.to_string())?;
        let step = 1e-4;
        let mut numeric = vec![0.0; analytic.len()];
        for k in 0..numeric.len() {
            let orig = model.params()[k];
            model.params_mut()[k] = orig + step;
            let lp = fm_loss(&model.predict(&x_t, t, &cond).unwrap(), &target, 1.0).unwrap();
            model.params_mut()[k] = orig - step;
            let lm = fm_loss(&model.predict(&x_t, t, &cond).unwrap(), &target, 1.0).unwrap();
            model.params_mut()[k] = orig;
            numeric[k] = (lp - lm) / (2.0 * step);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let rel = diff / scale;
        worst = worst.max(rel);
        ensure(rel < 1e-4, || format!("instance {i}: relative error {rel:e}"))?;
    }
    Ok(format!("10 instances, worst relative error {worst:.2e}"))
}

/// Returns the exact rectified-flow velocity toward a known `x0`.
struct ExactVelocity {
    x0: LatentTensor,
}

impl DenoiserBackend for ExactVelocity {
    fn predict(&self, x_t: &LatentTensor, t: f64, _c: &Condition) -> mangasfx_core::Result<LatentTensor> {
        // x_t = (1 − t)·x0 + t·z  ⇒  z − x0 = (x_t − x0) / t
        let v: Vec<f64> = x_t.values().iter().zip(self.x0.values()).map(|(x, a)| (x - a) / t).collect();
        LatentTensor::from_vec(x_t.shape(), v)
    }
}

fn oracle_sampling() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for steps in [1, 5, 50] {
        for trial in 0..5 {
            let x0 = LatentTensor::randn((3, 4, 5), &mut rng);
            let cond = Condition {
                latent: LatentTensor::zeros(0, 4, 5),
                prompt: String::new(),
            };
            let schedule = NoiseSchedule {
                sampler_steps: steps,
                ..NoiseSchedule::default()
            };
            let out = sample(&ExactVelocity { x0: x0.clone() }, &cond, x0.shape(), &schedule, trial).map_err(|e| e.to_string())?;
            let err = out.max_abs_diff(&x0);
            worst = worst.max(err);
            ensure(err < 1e-6, || format!("{steps} steps: max abs error {err:e}"))?;
        }
    }
    Ok(format!("steps 1/5/50, max abs error {worst:.1e}"))
}

fn compositing_conservation() -> Check {
    let blend = |fg: u32, bg: u32, a: u32| -> u8 { ((fg * a + bg * (255 - a)) as f64 / 255.0 + 0.5).floor() as u8 };
    ensure(blend(200, 100, 128) == 150, || "hand example".into())?;
    // every (fg, bg, alpha) triple: one 256×256 canvas per alpha value
    let bg = RasterImage::from_fn(256, 256, 3, |x, _, _| x as u8).unwrap();
    for a in 0..=255u32 {
        let layer = RgbaLayer::new(RasterImage::from_fn(256, 256, 4, |_, y, c| if c == 3 { a as u8 } else { y as u8 }).unwrap()).unwrap();
        let out = alpha_over(&bg, &layer, (0, 0)).map_err(|e| e.to_string())?;
        for y in 0..256 {
            for x in 0..256 {
                let want = match a {
                    0 => x as u8,
                    255 => y as u8,
                    _ => blend(y as u32, x as u32, a),
                };
                ensure(out.pixel(x, y).iter().all(|&v| v == want), || format!("fg {y} bg {x} alpha {a}"))?;
            }
        }
    }
    let fg = RasterImage::from_fn(1, 1, 4, |_, _, c| [200, 200, 200, 128][c]).unwrap();
    let one = alpha_over(&RasterImage::filled(1, 1, 3, 100).unwrap(), &RgbaLayer::new(fg).unwrap(), (0, 0)).unwrap();
    ensure(one.pixel(0, 0) == [150, 150, 150], || format!("bg 100, fg 200, a 128 gave {:?}", one.pixel(0, 0)))?;
    // random layers with random offsets
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let (bw, bh) = (rng.random_range(1..40), rng.random_range(1..40));
        let (lw, lh) = (rng.random_range(1..40), rng.random_range(1..40));
        let back = random_image(&mut rng, bw, bh, 3);
        let alphas = [0u8, 255, rng.random()];
        let layer = RasterImage::from_fn(lw, lh, 4, |_, _, c| if c == 3 { alphas[rng.random_range(0..3)] } else { rng.random() }).unwrap();
        let off = (rng.random_range(-20..20), rng.random_range(-20..20));
        let out = alpha_over(&back, &RgbaLayer::new(layer.clone()).unwrap(), off).map_err(|e| e.to_string())?;
        for y in 0..bh {
            for x in 0..bw {
                let (lx, ly) = (x as i64 - off.0, y as i64 - off.1);
                let inside = lx >= 0 && ly >= 0 && (lx as usize) < lw && (ly as usize) < lh;
                let want: Vec<u8> = if !inside {
                    back.pixel(x, y).to_vec()
                } else {
                    let src = layer.pixel(lx as usize, ly as usize);
                    (0..3).map(|c| blend(src[c] as u32, back.pixel(x, y)[c] as u32, src[3] as u32)).collect()
                };
                ensure(out.pixel(x, y) == want.as_slice(), || format!("random layer {i} at ({x},{y})"))?;
            }
        }
    }
    Ok("all 256³ (fg, bg, alpha) triples and 200 random offset layers exact".into())
}

fn random_blob(rng: &mut ChaCha8Rng, w: usize, h: usize, max_r: f64) -> BinaryMask {
    let n = rng.random_range(1..4);
    let blobs: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(0.5..max_r)))
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        blobs.iter().any(|&(cx, cy, r)| (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r)
    })
    .unwrap()
}

fn inpainter_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 100 {
        let (w, h) = (rng.random_range(2..48), rng.random_range(2..48));
        let img = random_image(&mut rng, w, h, 3);
        let hole = random_blob(&mut rng, w, h, 10.0);
        if hole.count_ones() == w * h {
            continue;
        }
        let out = inpaint_reference(&img, &hole, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS).map_err(|e| format!("pair {done}: {e}"))?;
        for y in 0..h {
            for x in 0..w {
                if !hole.get(x, y) {
                    ensure(out.pixel(x, y) == img.pixel(x, y), || format!("pair {done}: ({x},{y}) changed"))?;
                }
            }
        }
        let v: u8 = rng.random();
        let flat = RasterImage::filled(w, h, 3, v).unwrap();
        let filled = inpaint_reference(&flat, &hole, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS).map_err(|e| e.to_string())?;
        ensure(filled == flat, || format!("pair {done}: constant {v} not preserved"))?;
        done += 1;
    }
    Ok("100 random pairs; outside pixels identical, constants preserved".into())
}

fn edit_distance_oracle(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let sub = edit_distance_oracle(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = edit_distance_oracle(&a[1..], b, memo) + 1;
    let ins = edit_distance_oracle(a, &b[1..], memo) + 1;
    let d = sub.min(del).min(ins);
    memo.insert((a.len(), b.len()), d);
    d
}

fn ned_oracle(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    1.0 - edit_distance_oracle(&a, &b, &mut HashMap::new()) as f64 / n as f64
}

fn strings_up_to(len: usize, alphabet: &[char]) -> Vec<String> {
    let mut all = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..len {
        frontier = frontier
            .iter()
            .flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}")))
            .collect();
        all.extend(frontier.iter().cloned());
    }
    all
}

fn ned_equivalence() -> Check {
    let alphabet = ['a', 'b', 'c'];
    let short = strings_up_to(4, &alphabet);
    let mut pairs = 0usize;
    for a in &short {
        for b in &short {
            let (got, want) = (ned_pair(a, b), ned_oracle(a, b));
            ensure((got - want).abs() < 1e-12, || format!("({a:?}, {b:?}): {got} vs {want}"))?;
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draw = |rng: &mut ChaCha8Rng| -> String { (0..rng.random_range(0..=6)).map(|_| alphabet[rng.random_range(0..3)]).collect() };
    for _ in 0..100_000 {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (got, want) = (ned_pair(&a, &b), ned_oracle(&a, &b));
        ensure((got - want).abs() < 1e-12, || format!("({a:?}, {b:?}): {got} vs {want}"))?;
        ensure((0.0..=1.0).contains(&got) && got == ned_pair(&b, &a), || format!("range/symmetry on ({a:?}, {b:?})"))?;
    }
    Ok(format!("{pairs} exhaustive pairs (length <= 4) + 100000 random pairs (length <= 6)"))
}

fn fid_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = rng.random_range(1..12);
        let stats = |rng: &mut ChaCha8Rng| {
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.5)).collect();
            let mut cov = vec![0.0; d * d];
            for k in 0..d {
                cov[k * d + k] = sd[k] * sd[k];
            }
            (GaussianStats { mean: mean.clone(), cov, count: 10 }, mean, sd)
        };
        let (a, ma, sa) = stats(&mut rng);
        let (b, mb, sb) = stats(&mut rng);
        let want: f64 = (0..d).map(|k| (ma[k] - mb[k]).powi(2) + (sa[k] - sb[k]).powi(2)).sum();
        let got = frechet_distance(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-6, || format!("case {i}: {got} vs closed form {want}"))?;
    }
    let mut self_worst: f64 = 0.0;
    for i in 0..20 {
        let d = rng.random_range(1..40);
        let n = rng.random_range(2..80);
        let set: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let v = fid(&set, &set).map_err(|e| e.to_string())?;
        self_worst = self_worst.max(v.abs());
        ensure(v.abs() <= 1e-8, || format!("set {i} (n={n}, d={d}): FID(X,X) = {v:e}"))?;
    }
    Ok(format!("diagonal worst error {worst:.1e}; FID(X,X) worst {self_worst:.1e}"))
}

fn rgba_support() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut done = 0;
    while done < 200 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let density: f64 = rng.random_range(0.005..0.2);
        let mask = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap();
        if mask.is_empty() {
            continue;
        }
        let r = rng.random_range(0..5);
        let style = Style {
            fill: [rng.random(), rng.random(), rng.random()],
            outline: [rng.random(), rng.random(), rng.random()],
            outline_px: r,
        };
        let layer = convert_reference(&mask, &style).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let near = (y.saturating_sub(r)..=(y + r).min(h - 1)).any(|sy| (x.saturating_sub(r)..=(x + r).min(w - 1)).any(|sx| mask.get(sx, sy)));
                let px = layer.image().pixel(x, y);
                let want: [u8; 4] = if mask.get(x, y) {
                    [style.fill[0], style.fill[1], style.fill[2], 255]
                } else if near {
                    [style.outline[0], style.outline[1], style.outline[2], 255]
                } else {
                    [px[0], px[1], px[2], 0]
                };
                ensure(px == want, || format!("mask {done} ({w}x{h}, r={r}) at ({x},{y}): {px:?} vs {want:?}"))?;
            }
        }
        done += 1;
    }
    Ok("200 random masks up to 64x64 exact".into())
}

// ------------------------------------------------------------ dataset checks

fn record(page: PathBuf, page_id: &str, title: &str) -> AnnotationRecord {
    AnnotationRecord {
        page_id: page_id.into(),
        title: title.into(),
        text: "DON".into(),
        polygon: PolygonRegion::rect(1.0, 1.0, 5.0, 5.0),
        page_image: page,
        mask_image: PathBuf::from("unused.png"),
    }
}

fn dataset_protocol() -> Check {
    ensure(passes_min_size(301, 301, 300, true), || "301x301 rejected".into())?;
    ensure(!passes_min_size(300, 500, 300, true), || "300x500 kept".into())?;
    // the same boundary through real page files
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut recs = Vec::new();
    for (i, (w, h)) in [(301, 301), (300, 500), (500, 300), (1000, 301)].into_iter().enumerate() {
        let p = dir.path().join(format!("p{i}.png"));
        mangasfx::io::save_image(&p, &RasterImage::filled(w, h, 1, 255).unwrap()).map_err(|e| e.to_string())?;
        recs.push(record(p, &format!("p{i}"), "T"));
    }
    let (kept, dropped) = filter_min_size(recs, 300, true).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = kept.iter().map(|r| r.page_id.as_str()).collect();
    ensure(ids == ["p0", "p3"] && dropped == 2, || format!("kept {ids:?}, dropped {dropped}"))?;

    // split determinism over randomized corpora
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for corpus in 0..200 {
        let titles: Vec<String> = (0..rng.random_range(2..12)).map(|t| format!("Title {t}")).collect();
        let mut table = SplitTable::default();
        for (k, t) in titles.iter().enumerate() {
            if k == 0 || (k > 1 && rng.random_bool(0.7)) {
                table.train.insert(t.clone());
            } else {
                table.test.insert(t.clone());
            }
        }
        let recs: Vec<AnnotationRecord> = (0..rng.random_range(1..60))
            .map(|i| record(PathBuf::new(), &format!("page{i}"), &titles[rng.random_range(0..titles.len())]))
            .collect();
        let a = split_by_title(recs.clone(), &table).map_err(|e| e.to_string())?;
        let mut shuffled = recs.clone();
        shuffled.reverse();
        let b = split_by_title(shuffled, &table).map_err(|e| e.to_string())?;
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for (r, s) in a.iter().chain(&b) {
            let prev = *seen.entry(&r.title).or_insert(*s);
            ensure(prev == *s, || format!("corpus {corpus}: title {} in both splits", r.title))?;
            let want = if table.train.contains(&r.title) { Split::Train } else { Split::Test };
            ensure(*s == want, || format!("corpus {corpus}: {} not split by the table", r.title))?;
        }
        let again = split_by_title(recs, &table).map_err(|e| e.to_string())?;
        ensure(again.iter().map(|x| x.1).eq(a.iter().map(|x| x.1)), || format!("corpus {corpus}: rerun differs"))?;
    }
    let stray = vec![record(PathBuf::new(), "p", "Unlisted")];
    let table = SplitTable {
        train: ["A".to_string()].into(),
        test: ["B".to_string()].into(),
    };
    ensure(split_by_title(stray, &table).is_err(), || "unlisted title accepted".into())?;
    Ok("301x301 kept, 300x500 dropped; 200 random corpora split by title deterministically".into())
}

/// Licensed corpus: `MANGASFX_LICENSED_CONFIG` names a config whose
/// annotation source and split table describe the full corpus.
fn licensed_counts() -> Option<Check> {
    let path = std::env::var_os("MANGASFX_LICENSED_CONFIG")?;
    Some((|| {
        let mut cfg = PipelineConfig::load(Some(Path::new(&path))).map_err(|e| e.to_string())?;
        ensure(cfg.dataset.source == Source::Annotations, || "config must use the annotations source".into())?;
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        cfg.paths.output_root = out.path().to_path_buf();
        let run = Run::open(cfg).map_err(|e| e.to_string())?;
        let s = cmd_build_dataset(&run).map_err(|e| e.to_string())?;
        let msg = format!("{} train / {} test samples ({} / {} pages)", s.train_samples, s.test_samples, s.train_pages, s.test_pages);
        ensure((s.train_samples, s.test_samples) == (1010, 169), || msg.clone())?;
        Ok(msg)
    })())
}

// ---------------------------------------------------------------- toy run

fn toy_config(root: &Path, steps: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 2024;
    cfg.paths.output_root = root.to_path_buf();
    cfg.dataset.canvas = 64;
    cfg.dataset.synthetic.train_samples = 500;
    cfg.dataset.synthetic.test_samples = 50;
    cfg.train.steps = steps;
    cfg.train.log_every = 500;
    cfg.train.validate_every = 1000;
    cfg
}

/// Outputs that must match byte for byte across runs. The config and the
/// dataset summary hold the run's absolute path, and events carry timings.
const COMPARED: [&str; 6] = ["generate", "eval", "train", "dataset/samples", "dataset/manifest.jsonl", "ablation.csv"];

fn artifacts(run: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = COMPARED.iter().map(|p| run.join(p)).filter(|p| p.is_dir()).collect();
    for f in COMPARED.iter().map(|p| run.join(p)).filter(|p| p.is_file()) {
        out.insert(f.strip_prefix(run).unwrap().to_path_buf(), std::fs::read(&f).unwrap());
    }
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(run).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn toy_end_to_end() -> Check {
    let err = |e: mangasfx::Error| e.to_string();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = Run::open(toy_config(a.path(), 2000)).map_err(err)?;
    let reports = cmd_ablate(&first).map_err(err)?;
    let second = Run::open(toy_config(b.path(), 2000)).map_err(err)?;
    let again = cmd_ablate(&second).map_err(err)?;

    // (a) determinism: every artifact byte-identical, reports equal
    ensure(reports == again, || "reports differ between identical runs".into())?;
    let (fa, fb) = (artifacts(&first.dir), artifacts(&second.dir));
    ensure(fa.keys().any(|k| k.starts_with("train")) && fa.keys().any(|k| k.starts_with("generate")), || "no artifacts compared".into())?;
    let differing: Vec<String> = fa.keys().chain(fb.keys()).filter(|k| fa.get(*k) != fb.get(*k)).map(|k| k.display().to_string()).collect();
    ensure(differing.is_empty(), || format!("artifacts differ: {:?}", &differing[..differing.len().min(5)]))?;

    // (c) table shape
    let names: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    let expected: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
    ensure(names == expected, || format!("variants {names:?}"))?;
    ensure(reports.iter().all(|r| r.fid.is_finite() && r.ned.is_finite()), || "non-finite metric".into())?;
    ensure(reports.iter().all(|r| r.sample_count == 50), || "not every test sample scored".into())?;

    // (b) trained beats the initialization on the same test split
    let untrained = Run::open(toy_config(c.path(), 0)).map_err(err)?;
    cmd_build_dataset(&untrained).map_err(err)?;
    ensure(std::fs::read(untrained.manifest()).ok() == std::fs::read(first.manifest()).ok(), || "test splits differ".into())?;
    cmd_train(&untrained, Variant::Full.mode(), false).map_err(err)?;
    cmd_generate(&untrained, Variant::Full, None).map_err(err)?;
    let (_, base) = cmd_evaluate(&untrained, Variant::Full, None).map_err(err)?;
    let trained = &reports[0];
    ensure(trained.fid < base.fid, || format!("trained FID {} >= untrained FID {}", trained.fid, base.fid))?;

    let table: Vec<String> = reports.iter().map(|r| format!("{} {:.4}/{:.3}", r.variant, r.fid, r.ned)).collect();
    Ok(format!("deterministic; full FID {:.4} < untrained {:.4}; rows [{}]", trained.fid, base.fid, table.join(", ")))
}

// ---------------------------------------------------------------- driver

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let criteria: Vec<(&str, Duration, fn() -> Check)> = vec![
        ("concat_inversion", Duration::from_secs(10), concat_inversion),
        ("flow_gradient_check", Duration::from_secs(60), gradient_check),
        ("oracle_sampling", Duration::from_secs(10), oracle_sampling),
        ("compositing_conservation", Duration::from_secs(10), compositing_conservation),
        ("inpainter_contract", Duration::from_secs(30), inpainter_contract),
        ("ned_oracle_equivalence", Duration::from_secs(60), ned_equivalence),
        ("fid_oracle_equivalence", Duration::from_secs(30), fid_equivalence),
        ("mask_to_rgba_support", Duration::from_secs(30), rgba_support),
        ("toy_end_to_end", Duration::from_secs(30 * 60), toy_end_to_end),
        ("dataset_protocol", Duration::from_secs(10), dataset_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let result = result.and_then(|m| if took <= budget { Ok(m) } else { Err(format!("{m}; took {took:.1?}, budget {budget:?}")) });
        match result {
            Ok(m) => println!("ACCEPTANCE {name}: PASS ({m}; {took:.1?})"),
            Err(m) => {
                failed += 1;
                println!("ACCEPTANCE {name}: FAIL ({m})");
            }
        }
    }
    match licensed_counts() {
        None => println!("ACCEPTANCE licensed_dataset_counts: SKIP (MANGASFX_LICENSED_CONFIG not set)"),
        Some(Ok(m)) => println!("ACCEPTANCE licensed_dataset_counts: PASS ({m})"),
        Some(Err(m)) => {
            failed += 1;
            println!("ACCEPTANCE licensed_dataset_counts: FAIL ({m})");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
