//! Pipeline configuration (TOML).
//!
//! Every field has a default, so an empty file is a valid config. Values
//! marked "non-paper" are desk-scale choices, not published settings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mangasfx_core::composite::Placement;
use mangasfx_core::dataset::{SplitTable, DEFAULT_CANVAS, DEFAULT_EXPANSION, DEFAULT_MIN_PAGE, DEFAULT_TEMPLATE};
use mangasfx_core::flow::NoiseSchedule;
use mangasfx_core::rgba::{DEFAULT_CONVERTER_PROMPT, DEFAULT_SUPPORT_TOLERANCE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DATA_ROOT_ENV: &str = "MANGASFX_DATA_ROOT";

/// The three pipeline configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// In-context mask generation, then RGBA conversion and compositing.
    #[default]
    Full,
    /// Plain conditioning on the text render and context, no concatenated target.
    NoIncontext,
    /// In-context generation; the right half of the canvas is the output.
    MaskKontextCrop,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoIncontext, Variant::MaskKontextCrop];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoIncontext => "no_incontext",
            Variant::MaskKontextCrop => "mask_kontext_crop",
        }
    }

    pub fn mode(self) -> Conditioning {
        match self {
            Variant::Full | Variant::MaskKontextCrop => Conditioning::InContext,
            Variant::NoIncontext => Conditioning::Plain,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected full, no_incontext or mask_kontext_crop)")))
    }
}

/// How the denoiser is conditioned; each mode has its own checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Condition = concat(y_m, y); target = concat(x_m, x).
    InContext,
    /// Condition = channels of y_m and y; target = x_m alone.
    Plain,
}

impl Conditioning {
    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::InContext => "in_context",
            Conditioning::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root of the annotation sources (see the README for the layout).
    pub data_root: PathBuf,
    /// Run directories are created here.
    pub output_root: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            output_root: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Procedural pages generated into the run directory.
    #[default]
    Synthetic,
    /// Pages and annotations read from `paths.data_root`.
    Annotations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_titles: usize,
    pub test_titles: usize,
    pub min_page: usize,
    pub max_page: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_samples: 500,
            test_samples: 50,
            train_titles: 8,
            test_titles: 2,
            min_page: 320,
            max_page: 480,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: Source,
    /// Square canvas side for every sample image.
    pub canvas: usize,
    pub expansion: f64,
    pub min_page_size: usize,
    /// `true` keeps pages strictly larger than `min_page_size`.
    pub strict_min_size: bool,
    /// Minimum bbox IoU for pairing text and mask annotations.
    pub match_iou: f64,
    pub prompt_template: String,
    /// Titles per split; required for the annotation source.
    pub split: SplitTable,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            canvas: DEFAULT_CANVAS,
            expansion: DEFAULT_EXPANSION,
            min_page_size: DEFAULT_MIN_PAGE,
            strict_min_size: true,
            match_iou: 0.3,
            prompt_template: DEFAULT_TEMPLATE.to_string(),
            split: SplitTable::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub codec_factor: usize,
    pub hidden: usize,
    /// Adapter rank for the in-context model (non-paper).
    pub rank: usize,
    pub lora_scale: f64,
    /// Train the toy base weights too. It has no pretraining, so adapters
    /// alone start from a random map.
    pub train_base: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            codec_factor: 8,
            hidden: 32,
            rank: 8,
            lora_scale: 1.0,
            train_base: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Non-paper.
    pub batch_size: usize,
    /// Non-paper.
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
    pub log_every: u64,
    /// 0 disables validation grids.
    pub validate_every: u64,
    pub validation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 25_000,
            batch_size: 4,
            learning_rate: 1e-3,
            max_grad_norm: Some(1.0),
            log_every: 50,
            validate_every: 500,
            validation_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub split: mangasfx_core::dataset::Split,
    /// Abort with a nonzero exit when any sample fails.
    pub strict: bool,
    pub threshold: u8,
    pub placement: Placement,
    pub converter_prompt: String,
    pub support_tolerance: usize,
    pub outline_px: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            split: mangasfx_core::dataset::Split::Test,
            strict: true,
            threshold: 128,
            placement: Placement::Aligned,
            converter_prompt: DEFAULT_CONVERTER_PROMPT.to_string(),
            support_tolerance: DEFAULT_SUPPORT_TOLERANCE,
            outline_px: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Missing generated files abort the run (otherwise they are counted and skipped).
    pub strict: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { strict: true }
    }
}

/// Backend selections: `"reference"` (or a named built-in) or an
/// `http://` / `https://` adapter URI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub denoiser: String,
    pub converter: String,
    pub inpainter: String,
    pub captioner: String,
    /// `template`, `oracle` or a URI.
    pub recognizer: String,
    /// `histogram` or a URI.
    pub extractor: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            denoiser: "reference".into(),
            converter: "reference".into(),
            inpainter: "reference".into(),
            captioner: "reference".into(),
            recognizer: "template".into(),
            extractor: "histogram".into(),
        }
    }
}

impl BackendConfig {
    /// Checks every selection names a built-in or an adapter URI.
    pub fn validate(&self) -> Result<()> {
        let uri = |s: &str| s.starts_with("http://") || s.starts_with("https://");
        let checks: [(&str, &str, &[&str]); 6] = [
            ("denoiser", &self.denoiser, &["reference"]),
            ("converter", &self.converter, &["reference"]),
            ("inpainter", &self.inpainter, &["reference"]),
            ("captioner", &self.captioner, &["reference"]),
            ("recognizer", &self.recognizer, &["template", "reference", "oracle"]),
            ("extractor", &self.extractor, &["histogram", "reference"]),
        ];
        for (kind, sel, names) in checks {
            if !(uri(sel) || names.contains(&sel)) {
                return Err(Error::Config(format!("backends.{kind} = '{sel}' is neither one of {names:?} nor an http(s) URI")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub seed: u64,
    pub variant: Variant,
    /// Worker threads for per-sample stages; 0 uses every core.
    pub workers: usize,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub evaluate: EvaluateConfig,
    pub backends: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            variant: Variant::Full,
            workers: 0,
            paths: Paths::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            schedule: NoiseSchedule::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
            evaluate: EvaluateConfig::default(),
            backends: BackendConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or defaults when `None`), then applies the data-root
    /// environment override.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            cfg.paths.data_root = PathBuf::from(root);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let d = &self.dataset;
        let f = self.model.codec_factor;
        if f == 0 || d.canvas == 0 || d.canvas % f != 0 {
            return Err(Error::Config(format!("canvas {} must be a positive multiple of codec_factor {f}", d.canvas)));
        }
        if !(d.expansion.is_finite() && d.expansion >= 0.0) {
            return Err(Error::Config("dataset.expansion must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&d.match_iou) {
            return Err(Error::Config("dataset.match_iou must lie in [0, 1]".into()));
        }
        if self.model.hidden == 0 {
            return Err(Error::Config("model.hidden must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0) {
            return Err(Error::Config("train.learning_rate must be finite and >= 0".into()));
        }
        self.schedule.validate()?;
        d.split.validate()?;
        self.backends.validate()?;
        if d.source == Source::Synthetic {
            let s = &d.synthetic;
            if s.train_titles == 0 || s.test_titles == 0 || s.min_page > s.max_page {
                return Err(Error::Config("synthetic source needs titles in both splits and min_page <= max_page".into()));
            }
        }
        Ok(())
    }

    /// Hash of everything that affects artifacts. The variant, paths and
    /// worker count are left out so all variants of one setup share a run;
    /// the seed is appended to the run directory name instead.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.seed = 0;
        canon.variant = Variant::Full;
        canon.workers = 0;
        canon.paths = Paths::default();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.output_root.join(format!("{}-s{}", self.digest(), self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.dataset.canvas = 64;
        cfg.generate.placement = Placement::PolygonBox;
        cfg.dataset.split.train.insert("Alpha".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_and_rejections() {
        let cfg = PipelineConfig::from_toml("seed = 7\nvariant = \"no_incontext\"\n[dataset]\ncanvas = 64\n").unwrap();
        assert_eq!((cfg.seed, cfg.variant, cfg.dataset.canvas), (7, Variant::NoIncontext, 64));
        assert!(PipelineConfig::from_toml("variant = \"bogus\"").is_err());
        assert!(PipelineConfig::from_toml("[dataset]\ncanvas = 60").is_err());
        assert!(PipelineConfig::from_toml("typo = 1").is_err());
        assert!(PipelineConfig::from_toml("format_version = 9").is_err());
        assert!(PipelineConfig::from_toml("[backends]\nconverter = \"magic\"").is_err());
        assert!(PipelineConfig::from_toml("[backends]\nrecognizer = \"oracle\"\ninpainter = \"http://127.0.0.1:9/x\"").is_ok());
    }

    #[test]
    fn digest_ignores_variant_and_paths() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.variant = Variant::MaskKontextCrop;
        b.paths.output_root = "/elsewhere".into();
        b.workers = 3;
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.run_dir().file_name(), b.run_dir().file_name());
        b.train.steps = 10;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::MaskKontextCrop.mode(), Conditioning::InContext);
        assert_eq!(Variant::NoIncontext.mode(), Conditioning::Plain);
    }
}
