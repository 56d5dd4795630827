use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mangasfx::config::{Conditioning, PipelineConfig, Variant};
use mangasfx::pipeline::{cmd_ablate, cmd_build_dataset, cmd_evaluate, cmd_generate, cmd_train, Run};
use mangasfx::Result;

/// Manga sound-effect stylization: dataset, training, generation, evaluation.
#[derive(Debug, Parser)]
#[command(name = "mangasfx", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Total training steps.
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    canvas: Option<usize>,
    /// Overrides `paths.data_root` (and the MANGASFX_DATA_ROOT variable).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    /// Worker threads for per-sample stages; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Skip missing or failed samples instead of aborting.
    #[arg(long, global = true)]
    lenient: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge annotations (or generate synthetic pages) and write the sample manifest.
    BuildDataset,
    /// Train the toy denoiser for one conditioning mode.
    Train {
        /// Defaults to the mode of the selected variant.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Conditioning>,
        /// Continue from the run's checkpoint when one exists.
        #[arg(long)]
        resume: bool,
    },
    /// Generate the selected split for the selected variant.
    Generate {
        /// Checkpoint to use instead of the run's own.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a variant's generated images.
    Evaluate {
        /// Directory holding `images/<sample_id>.png`; defaults to the run's output.
        #[arg(long)]
        generated: Option<PathBuf>,
    },
    /// Train what is missing, then generate and score all three variants.
    Ablate,
}

fn parse_mode(s: &str) -> std::result::Result<Conditioning, String> {
    match s {
        "in_context" => Ok(Conditioning::InContext),
        "plain" => Ok(Conditioning::Plain),
        _ => Err(format!("unknown mode '{s}' (expected in_context or plain)")),
    }
}

fn resolve(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(c.config.as_deref())?;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(v) = c.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = c.canvas {
        cfg.dataset.canvas = v;
    }
    if let Some(v) = &c.data_root {
        cfg.paths.data_root = v.clone();
    }
    if let Some(v) = &c.output_root {
        cfg.paths.output_root = v.clone();
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if c.lenient {
        cfg.generate.strict = false;
        cfg.evaluate.strict = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    if cfg.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
            log::warn!("worker pool: {e}");
        }
    }
    let variant = cfg.variant;
    let run = Run::open(cfg)?;
    println!("run directory: {}", run.dir.display());
    match cli.command {
        Command::BuildDataset => {
            let s = cmd_build_dataset(&run)?;
            println!(
                "train: {} samples from {} pages; test: {} samples from {} pages; dropped (page size): {}; skipped: {}",
                s.train_samples,
                s.train_pages,
                s.test_samples,
                s.test_pages,
                s.dropped_small,
                s.skipped.len()
            );
            println!("{}", s.manifest.display());
        }
        Command::Train { mode, resume } => {
            let o = cmd_train(&run, mode.unwrap_or(variant.mode()), resume)?;
            if let (Some(first), Some(last)) = (o.losses.first(), o.losses.last()) {
                println!("loss {:.5} (step {}) -> {:.5} (step {})", first.1, first.0, last.1, last.0);
            }
            println!("{}", o.checkpoint.display());
        }
        Command::Generate { checkpoint } => {
            let (dir, s) = cmd_generate(&run, variant, checkpoint.as_deref())?;
            println!("{variant}: {} of {} written, {} failed, {} warning(s)", s.written, s.total, s.failed.len(), s.warnings.len());
            println!("{}", dir.display());
        }
        Command::Evaluate { generated } => {
            let (path, r) = cmd_evaluate(&run, variant, generated.as_deref())?;
            println!("{}: FID {:.3}, NED {:.3} over {} sample(s)", r.variant, r.fid, r.ned, r.sample_count);
            println!("{}", path.display());
        }
        Command::Ablate => {
            let reports = cmd_ablate(&run)?;
            print!("{}", mangasfx::evaluate::render_text(&reports));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
