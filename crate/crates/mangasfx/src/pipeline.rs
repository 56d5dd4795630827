//! Subcommand implementations over one run directory.
//!
//! ```text
//! <output_root>/<digest>-s<seed>/
//!   config.toml            resolved config
//!   events.jsonl
//!   sources/               synthetic pages (synthetic source only)
//!   dataset/manifest.jsonl dataset/summary.json dataset/samples/<id>/{y_m,y,x_m,x}.png
//!   train/<mode>/          checkpoint.json loss.csv val/
//!   generate/<variant>/    images/ masks/ layers/ generation.json
//!   eval/<variant>.json
//!   ablation.csv ablation.txt
//! ```

use std::path::{Path, PathBuf};

use mangasfx_core::dataset::SplitTable;
use mangasfx_core::metrics::MetricReport;
use serde_json::json;

use crate::backends;
use crate::config::{Conditioning, PipelineConfig, Source, Variant};
use crate::dataset::{build_dataset, BuildSummary, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_run, oracle_recognizer, render_csv, render_text, EvalOptions};
use crate::events::EventLog;
use crate::generate::{generate, load_model, GenerateSummary};
use crate::io;
use crate::model::Checkpoint;
use crate::sources::{load_and_merge, SPLIT_FILE};
use crate::synth;
use crate::train::{train, train_dir, TrainOutcome, CHECKPOINT_FILE};

pub const CONFIG_FILE: &str = "config.toml";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TXT: &str = "ablation.txt";

/// A run directory with its resolved config and event log.
pub struct Run {
    pub cfg: PipelineConfig,
    pub dir: PathBuf,
    pub events: EventLog,
}

impl Run {
    /// Creates (or reopens) the run directory for `cfg` and records the
    /// resolved config in it.
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.run_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        io::write_bytes(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
        let events = EventLog::open(&dir.join(EVENTS_FILE))?;
        Ok(Self { cfg, dir, events })
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("dataset").join(MANIFEST_FILE)
    }

    pub fn checkpoint(&self, mode: Conditioning) -> PathBuf {
        train_dir(&self.dir, mode).join(CHECKPOINT_FILE)
    }

    pub fn generated_dir(&self, variant: Variant) -> PathBuf {
        self.dir.join("generate").join(variant.as_str())
    }

    pub fn report_path(&self, variant: Variant) -> PathBuf {
        self.dir.join("eval").join(format!("{}.json", variant.as_str()))
    }

    fn require_manifest(&self) -> Result<PathBuf> {
        let m = self.manifest();
        if !m.is_file() {
            return Err(Error::Config(format!("{} does not exist; run build-dataset first", m.display())));
        }
        Ok(m)
    }
}

fn read_split(root: &Path, configured: &SplitTable) -> Result<SplitTable> {
    if !configured.train.is_empty() || !configured.test.is_empty() {
        return Ok(configured.clone());
    }
    let p = root.join(SPLIT_FILE);
    if !p.is_file() {
        return Err(Error::Config(format!("no split in the config and no {}", p.display())));
    }
    io::read_json(&p)
}

pub fn cmd_build_dataset(run: &Run) -> Result<BuildSummary> {
    let cfg = &run.cfg;
    let (root, table) = match cfg.dataset.source {
        Source::Synthetic => {
            let root = run.dir.join("sources");
            let table = synth::generate(&root, &cfg.dataset.synthetic, cfg.seed)?;
            (root, table)
        }
        Source::Annotations => {
            let root = cfg.paths.data_root.clone();
            let table = read_split(&root, &cfg.dataset.split)?;
            (root, table)
        }
    };
    let (records, merge) = load_and_merge(&root, cfg.dataset.match_iou)?;
    run.events.emit("build_dataset", "merged", json!({"root": root, "records": records.len(), "summary": merge}));
    let captioner = backends::captioner(cfg)?;
    let out = run.dir.join("dataset");
    let summary = build_dataset(records, &table, &cfg.dataset, captioner.as_ref(), &out)?;
    io::write_json(&out.join("summary.json"), &summary)?;
    run.events.emit("build_dataset", "done", serde_json::to_value(&summary).unwrap_or_default());
    Ok(summary)
}

/// Trains `mode`. With `resume`, continues from the run's existing checkpoint when there is one.
pub fn cmd_train(run: &Run, mode: Conditioning, resume: bool) -> Result<TrainOutcome> {
    let manifest = run.require_manifest()?;
    let ck = run.checkpoint(mode);
    let from = (resume && ck.is_file()).then_some(ck.as_path());
    train(&run.cfg, mode, &manifest, &train_dir(&run.dir, mode), from, &run.events)
}

/// Generates `variant` into its output directory, replacing earlier outputs.
pub fn cmd_generate(run: &Run, variant: Variant, checkpoint: Option<&Path>) -> Result<(PathBuf, GenerateSummary)> {
    let manifest = run.require_manifest()?;
    let default_ck = run.checkpoint(variant.mode());
    let ck = checkpoint.or((run.cfg.backends.denoiser == "reference").then_some(default_ck.as_path()));
    let model = load_model(&run.cfg, variant, ck)?;
    let out = run.generated_dir(variant);
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    let summary = generate(&run.cfg, variant, &model, &manifest, &out, &run.events)?;
    Ok((out, summary))
}

/// Scores `variant` (from `generated` or the run's own output) and writes the report.
pub fn cmd_evaluate(run: &Run, variant: Variant, generated: Option<&Path>) -> Result<(PathBuf, MetricReport)> {
    let cfg = &run.cfg;
    let manifest = run.require_manifest()?;
    let dir = generated.map(Path::to_path_buf).unwrap_or_else(|| run.generated_dir(variant));
    let split = cfg.generate.split;
    let extractor = backends::extractor(cfg)?;
    let recognizer = backends::recognizer(cfg, || {
        oracle_recognizer(&manifest, split).unwrap_or_else(|e| {
            log::error!("oracle recognizer: {e}");
            Default::default()
        })
    })?;
    let digest = cfg.digest();
    let opts = EvalOptions {
        variant: variant.as_str(),
        split,
        strict: cfg.evaluate.strict,
        config_digest: &digest,
    };
    let report = evaluate_run(&dir, &manifest, extractor.as_ref(), recognizer.as_ref(), &opts)?;
    let path = run.report_path(variant);
    io::write_json(&path, &report)?;
    run.events.emit("evaluate", "done", serde_json::to_value(&report).unwrap_or_default());
    Ok((path, report))
}

fn needs_training(run: &Run, mode: Conditioning) -> Result<bool> {
    let p = run.checkpoint(mode);
    if !p.is_file() {
        return Ok(true);
    }
    Ok(Checkpoint::load(&p)?.step < run.cfg.train.steps)
}

/// Builds the dataset and trains both modes when missing, then generates and
/// scores all three variants and writes the comparison table.
pub fn cmd_ablate(run: &Run) -> Result<Vec<MetricReport>> {
    if !run.manifest().is_file() {
        cmd_build_dataset(run)?;
    }
    if run.cfg.backends.denoiser == "reference" {
        for mode in [Conditioning::InContext, Conditioning::Plain] {
            if needs_training(run, mode)? {
                cmd_train(run, mode, true)?;
            }
        }
    }
    let mut reports = Vec::new();
    for v in Variant::ALL {
        cmd_generate(run, v, None)?;
        reports.push(cmd_evaluate(run, v, None)?.1);
    }
    io::write_bytes(&run.dir.join(ABLATION_CSV), render_csv(&reports).as_bytes())?;
    io::write_bytes(&run.dir.join(ABLATION_TXT), render_text(&reports).as_bytes())?;
    run.events.emit("ablate", "done", json!({"variants": reports.len()}));
    Ok(reports)
}
