//! Backend selection and HTTP JSON adapters.
//!
//! A selection is either a built-in name or an `http(s)://` URI. Adapters
//! POST JSON with images as base64 PNG:
//!
//! | backend    | request                                             | response                    |
//! |------------|-----------------------------------------------------|-----------------------------|
//! | denoiser   | `x_t` {shape, values}, `t`, `condition_png` [..], `prompt` | `velocity` {shape, values} |
//! | converter  | `mask_png`, `prompt`                                | `rgba_png`                  |
//! | inpainter  | `image_png`, `mask_png`                             | `image_png`                 |
//! | captioner  | `image_png`                                         | `caption`                   |
//! | recognizer | `image_png`                                         | `text`                      |
//! | extractor  | `image_png`                                         | `features` [f64]            |

use std::collections::HashMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mangasfx_core::composite::{InpainterBackend, ReferenceInpainter};
use mangasfx_core::dataset::{CaptionerBackend, ReferenceCaptioner};
use mangasfx_core::flow::codec::PatchCodec;
use mangasfx_core::flow::{Condition, DenoiserBackend, LatentTensor};
use mangasfx_core::metrics::{FeatureExtractor, HistogramExtractor, RecognizerBackend, TemplateRecognizer};
use mangasfx_core::raster::{BinaryMask, RasterImage};
use mangasfx_core::rgba::{ConverterBackend, ReferenceConverter, RgbaLayer, Style};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{decode_png, encode_png};

pub type Converter = Box<dyn ConverterBackend + Send + Sync>;
pub type Inpainter = Box<dyn InpainterBackend + Send + Sync>;
pub type Captioner = Box<dyn CaptionerBackend + Send + Sync>;
pub type Recognizer = Box<dyn RecognizerBackend + Send + Sync>;
pub type Extractor = Box<dyn FeatureExtractor + Send + Sync>;

pub fn is_uri(selection: &str) -> bool {
    selection.starts_with("http://") || selection.starts_with("https://")
}

fn unknown(kind: &str, selection: &str, names: &str) -> Error {
    Error::Config(format!("unknown {kind} backend '{selection}' (expected {names} or an http(s) URI)"))
}

/// JSON-over-HTTP client shared by all adapters.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    uri: String,
    agent: ureq::Agent,
}

impl HttpAdapter {
    pub fn new(uri: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self { uri: uri.to_string(), agent }
    }

    pub fn uri(&self) -> &str {
        &self.uri
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Adapter {
            uri: self.uri.clone(),
            message: message.into(),
        }
    }

    pub fn call(&self, body: &Value) -> Result<Value> {
        let mut resp = self
            .agent
            .post(&self.uri)
            .send_json(body)
            .map_err(|e| self.fail(e.to_string()))?;
        resp.body_mut().read_json::<Value>().map_err(|e| self.fail(e.to_string()))
    }

    fn field<'a>(&self, v: &'a Value, key: &str) -> Result<&'a Value> {
        v.get(key).ok_or_else(|| self.fail(format!("response has no '{key}'")))
    }

    fn png_field(&self, v: &Value, key: &str) -> Result<RasterImage> {
        let s = self.field(v, key)?.as_str().ok_or_else(|| self.fail(format!("'{key}' is not a string")))?;
        let bytes = STANDARD.decode(s).map_err(|e| self.fail(format!("'{key}': {e}")))?;
        decode_png(&bytes)
    }
}

fn png_b64(img: &RasterImage) -> Result<String> {
    Ok(STANDARD.encode(encode_png(img)?))
}

fn core_err(e: Error) -> mangasfx_core::Error {
    match e {
        Error::Core(c) => c,
        other => mangasfx_core::Error::Backend(other.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireTensor {
    shape: (usize, usize, usize),
    values: Vec<f64>,
}

/// Remote velocity predictor. The condition latent is decoded back into
/// RGB canvases (one per 3·f² channel group) before it is sent.
#[derive(Debug, Clone)]
pub struct HttpDenoiser {
    pub http: HttpAdapter,
    pub codec: PatchCodec,
}

impl DenoiserBackend for HttpDenoiser {
    fn predict(&self, x_t: &LatentTensor, t: f64, condition: &Condition) -> mangasfx_core::Result<LatentTensor> {
        let group = 3 * self.codec.factor() * self.codec.factor();
        let (c, h, w) = condition.latent.shape();
        let mut canvases = Vec::new();
        for g in 0..c / group {
            let part = LatentTensor::from_vec((group, h, w), condition.latent.values()[g * group * h * w..(g + 1) * group * h * w].to_vec())?;
            canvases.push(png_b64(&self.codec.decode(&part, 3)?).map_err(core_err)?);
        }
        let body = json!({
            "x_t": WireTensor { shape: x_t.shape(), values: x_t.values().to_vec() },
            "t": t,
            "condition_png": canvases,
            "prompt": condition.prompt,
        });
        let resp = self.http.call(&body).map_err(core_err)?;
        let v: WireTensor = serde_json::from_value(self.http.field(&resp, "velocity").map_err(core_err)?.clone())
            .map_err(|e| mangasfx_core::Error::Backend(format!("{}: {e}", self.http.uri)))?;
        LatentTensor::from_vec(v.shape, v.values)
    }
}

pub struct HttpConverter(pub HttpAdapter);

impl ConverterBackend for HttpConverter {
    fn name(&self) -> &str {
        self.0.uri()
    }

    fn convert(&self, mask: &BinaryMask, prompt: &str) -> mangasfx_core::Result<RgbaLayer> {
        let body = json!({"mask_png": png_b64(&mask.to_image()).map_err(core_err)?, "prompt": prompt});
        let resp = self.0.call(&body).map_err(core_err)?;
        RgbaLayer::new(self.0.png_field(&resp, "rgba_png").map_err(core_err)?)
    }
}

pub struct HttpInpainter(pub HttpAdapter);

impl InpainterBackend for HttpInpainter {
    fn name(&self) -> &str {
        self.0.uri()
    }

    fn inpaint(&self, image: &RasterImage, hole: &BinaryMask) -> mangasfx_core::Result<RasterImage> {
        let body = json!({
            "image_png": png_b64(image).map_err(core_err)?,
            "mask_png": png_b64(&hole.to_image()).map_err(core_err)?,
        });
        let resp = self.0.call(&body).map_err(core_err)?;
        Ok(self.0.png_field(&resp, "image_png").map_err(core_err)?.to_rgb())
    }
}

pub struct HttpCaptioner(pub HttpAdapter);

impl CaptionerBackend for HttpCaptioner {
    fn name(&self) -> &str {
        self.0.uri()
    }

    fn caption(&self, image: &RasterImage) -> mangasfx_core::Result<String> {
        let resp = self.0.call(&json!({"image_png": png_b64(image).map_err(core_err)?})).map_err(core_err)?;
        let v = self.0.field(&resp, "caption").map_err(core_err)?;
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| mangasfx_core::Error::Backend(format!("{}: caption is not a string", self.0.uri())))
    }
}

pub struct HttpRecognizer(pub HttpAdapter);

impl RecognizerBackend for HttpRecognizer {
    fn name(&self) -> &str {
        self.0.uri()
    }

    fn recognize(&self, image: &RasterImage) -> mangasfx_core::Result<String> {
        let resp = self.0.call(&json!({"image_png": png_b64(image).map_err(core_err)?})).map_err(core_err)?;
        let v = self.0.field(&resp, "text").map_err(core_err)?;
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| mangasfx_core::Error::Backend(format!("{}: text is not a string", self.0.uri())))
    }
}

pub struct HttpExtractor {
    pub http: HttpAdapter,
    pub dim: usize,
}

impl FeatureExtractor for HttpExtractor {
    fn name(&self) -> &str {
        self.http.uri()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, image: &RasterImage) -> mangasfx_core::Result<Vec<f64>> {
        let resp = self.http.call(&json!({"image_png": png_b64(image).map_err(core_err)?})).map_err(core_err)?;
        let f: Vec<f64> = serde_json::from_value(self.http.field(&resp, "features").map_err(core_err)?.clone())
            .map_err(|e| mangasfx_core::Error::Backend(format!("{}: {e}", self.http.uri())))?;
        Ok(f)
    }
}

/// Looks generated images up in a table of known images; unknown images read as "".
#[derive(Debug, Clone, Default)]
pub struct OracleRecognizer {
    table: HashMap<[u8; 32], String>,
}

pub fn image_key(img: &RasterImage) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in [img.width(), img.height(), img.channels()] {
        h.update((d as u64).to_le_bytes());
    }
    h.update(img.pixels());
    h.finalize().into()
}

impl OracleRecognizer {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a RasterImage, &'a str)>) -> Self {
        Self {
            table: pairs.into_iter().map(|(img, t)| (image_key(img), t.to_string())).collect(),
        }
    }
}

impl RecognizerBackend for OracleRecognizer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn recognize(&self, image: &RasterImage) -> mangasfx_core::Result<String> {
        Ok(self.table.get(&image_key(image)).cloned().unwrap_or_default())
    }
}

pub fn converter(cfg: &PipelineConfig) -> Result<Converter> {
    match cfg.backends.converter.as_str() {
        "reference" => Ok(Box::new(ReferenceConverter {
            style: Style {
                outline_px: cfg.generate.outline_px,
                ..Style::default()
            },
        })),
        s if is_uri(s) => Ok(Box::new(HttpConverter(HttpAdapter::new(s)))),
        s => Err(unknown("converter", s, "'reference'")),
    }
}

pub fn inpainter(cfg: &PipelineConfig) -> Result<Inpainter> {
    match cfg.backends.inpainter.as_str() {
        "reference" => Ok(Box::new(ReferenceInpainter::default())),
        s if is_uri(s) => Ok(Box::new(HttpInpainter(HttpAdapter::new(s)))),
        s => Err(unknown("inpainter", s, "'reference'")),
    }
}

pub fn captioner(cfg: &PipelineConfig) -> Result<Captioner> {
    match cfg.backends.captioner.as_str() {
        "reference" => Ok(Box::new(ReferenceCaptioner::default())),
        s if is_uri(s) => Ok(Box::new(HttpCaptioner(HttpAdapter::new(s)))),
        s => Err(unknown("captioner", s, "'reference'")),
    }
}

/// `oracle` needs the ground-truth pairs, supplied by the caller.
pub fn recognizer(cfg: &PipelineConfig, oracle: impl FnOnce() -> OracleRecognizer) -> Result<Recognizer> {
    match cfg.backends.recognizer.as_str() {
        "template" | "reference" => Ok(Box::new(TemplateRecognizer::default())),
        "oracle" => Ok(Box::new(oracle())),
        s if is_uri(s) => Ok(Box::new(HttpRecognizer(HttpAdapter::new(s)))),
        s => Err(unknown("recognizer", s, "'template', 'oracle'")),
    }
}

pub fn extractor(cfg: &PipelineConfig) -> Result<Extractor> {
    match cfg.backends.extractor.as_str() {
        "histogram" | "reference" => Ok(Box::new(HistogramExtractor)),
        s if is_uri(s) => Ok(Box::new(HttpExtractor {
            http: HttpAdapter::new(s),
            dim: 0,
        })),
        s => Err(unknown("extractor", s, "'histogram'")),
    }
}
