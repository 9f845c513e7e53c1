//! The `wcl` experiment runner.

mod config;
pub mod plots;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::data::{perturb_dataset, write_split_manifest, Dataset, PerturbKind, Perturbation};
use crate::error::{Error, Result};
use crate::eval::{extract_embeddings, fine_tune, linear_evaluate, project_2d, write_projection_csv, EvalReport, Protocol};
use crate::nn::Encoder;
use crate::rng::{stream, tag};
use crate::trainer::{pretrain, write_trace_csv, Checkpoint, Profile};

pub use config::{DataConfig, DataSource, ExperimentConfig, RobustnessConfig};
use plots::Series;

#[derive(Debug, Parser)]
#[command(name = "wcl", version, about = "Weakly contrastive self-supervised learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; each run writes to a stamped subdirectory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pretrained checkpoint. Without one, a freshly initialized encoder is used.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Self-supervised pretraining; writes checkpoint.zip and trace.csv.
    Pretrain,
    /// Draw the labeled subset; writes split.csv.
    Split,
    /// Linear evaluation on frozen embeddings.
    Evaluate,
    /// End-to-end fine-tuning.
    Finetune,
    /// Accuracy under input noise and blur, for each protocol.
    Robustness,
    /// 2-D PCA projection of the embeddings.
    Plot,
    /// Write the synthetic dataset as 16-bit PNG class folders.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Split => "split",
            Command::Evaluate => "evaluate",
            Command::Finetune => "finetune",
            Command::Robustness => "robustness",
            Command::Plot => "plot",
            Command::Synth => "synth",
        }
    }
}

/// Resolve the configuration for a parsed command line.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), cli.profile)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
        cfg.apply_seed();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run_dir(cfg: &ExperimentConfig, command: Command) -> Result<PathBuf> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stem = format!("{}-{secs}-s{}", command.name(), cfg.pretrain.seed);
    let mut dir = cfg.out_dir.join(&stem);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = cfg.out_dir.join(format!("{stem}-{n}"));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run one command. Returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let cfg = resolve_config(cli)?;
    let dir = run_dir(&cfg, cli.command)?;
    write_text(&dir.join("config.resolved.toml"), &cfg.to_toml()?)?;
    info!("{} run in {}", cli.command.name(), dir.display());
    match cli.command {
        Command::Pretrain => cmd_pretrain(&cfg, &dir)?,
        Command::Split => cmd_split(&cfg, &dir)?,
        Command::Evaluate => cmd_eval(&cfg, cli.checkpoint.as_deref(), Protocol::Linear, &dir)?,
        Command::Finetune => cmd_eval(&cfg, cli.checkpoint.as_deref(), Protocol::FineTuned, &dir)?,
        Command::Robustness => cmd_robustness(&cfg, cli.checkpoint.as_deref(), &dir)?,
        Command::Plot => cmd_plot(&cfg, cli.checkpoint.as_deref(), &dir)?,
        Command::Synth => cmd_synth(&cfg, &dir)?,
    }
    Ok(dir)
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("wcl: {e}");
            e.exit_code()
        }
    }
}

fn cmd_pretrain(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = cfg.load_data()?;
    let ckpt = pretrain(&data, &cfg.pretrain, &cfg.augment)?;
    ckpt.save(&dir.join("checkpoint.zip"))?;
    write_trace_csv(&dir.join("trace.csv"), &ckpt.trace)?;
    plots::trace_chart(&dir.join("trace.svg"), &ckpt.trace)?;
    info!("checkpoint digest {}", ckpt.digest());
    Ok(())
}

fn cmd_split(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = cfg.load_data()?;
    let split = cfg.split.apply(&data)?;
    write_split_manifest(&dir.join("split.csv"), &[("labeled", &split.small), ("unlabeled", &split.rest)])?;
    info!("{} labeled, {} unlabeled", split.small.len(), split.rest.len());
    Ok(())
}

/// The checkpoint to evaluate, or a fresh initialization when none is given.
fn load_checkpoint(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Checkpoint> {
    let ckpt = match path {
        Some(p) => Checkpoint::load(p)?,
        None => {
            info!("no checkpoint given; using a randomly initialized encoder");
            let enc = Encoder::new(cfg.pretrain.encoder.clone(), &mut stream(cfg.pretrain.seed, &[tag::ENCODER_INIT]))?;
            Checkpoint::from_encoder(&enc, cfg.pretrain.clone(), cfg.augment.clone())
        }
    };
    let (want, have) = (cfg.pretrain.encoder.input_size, ckpt.encoder.input_size);
    if want != have {
        return Err(Error::config(format!("checkpoint expects {have}px inputs but the data is {want}px")));
    }
    Ok(ckpt)
}

fn evaluate(ckpt: &Checkpoint, cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, protocol: Protocol) -> Result<EvalReport> {
    match protocol {
        Protocol::Linear => linear_evaluate(ckpt, train, test, &cfg.eval),
        Protocol::FineTuned => fine_tune(ckpt, train, test, &cfg.eval),
    }
}

fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    report.write_json(&dir.join("report.json"))?;
    report.append_summary_csv(&dir.join("summary.csv"))?;
    report.write_confusion_csv(&dir.join("confusion.csv"))
}

fn cmd_eval(cfg: &ExperimentConfig, ckpt: Option<&Path>, protocol: Protocol, dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(cfg, ckpt)?;
    let split = cfg.split.apply(&cfg.load_data()?)?;
    let report = evaluate(&ckpt, cfg, &split.small, &split.rest, protocol)?;
    write_report(&report, dir)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!("{} accuracy {:.4}", protocol.code(), report.overall_accuracy);
    Ok(())
}

#[derive(Serialize)]
struct RobustnessRow {
    perturbation: &'static str,
    strength: f64,
    protocol: &'static str,
    classifier: String,
    accuracy: f64,
    best_accuracy: Option<f64>,
    stable_accuracy: Option<f64>,
}

fn cmd_robustness(cfg: &ExperimentConfig, ckpt: Option<&Path>, dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(cfg, ckpt)?;
    let data = cfg.load_data()?;
    let mut base = cfg.split.clone();
    base.perturbation = None;
    let clean = base.apply(&data)?;
    let path = dir.join("robustness.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    let sweeps = [
        (PerturbKind::Noise, "noise", &cfg.robustness.noise_levels, "noise density"),
        (PerturbKind::Blur, "blur", &cfg.robustness.blur_levels, "blur sigma"),
    ];
    for (kind, name, levels, x_label) in sweeps {
        let mut series: Vec<Series> = cfg
            .robustness
            .protocols
            .iter()
            .map(|p| Series {
                label: p.code().to_string(),
                points: Vec::new(),
            })
            .collect();
        for &strength in levels.iter() {
            let spec = Perturbation { kind, strength };
            // same labeled/unlabeled partition at every level
            let train = perturb_dataset(&clean.small, spec.kind, spec.strength, base.seed)?;
            let test = perturb_dataset(&clean.rest, spec.kind, spec.strength, base.seed.wrapping_add(1))?;
            for (protocol, s) in cfg.robustness.protocols.iter().zip(series.iter_mut()) {
                let r = evaluate(&ckpt, cfg, &train, &test, *protocol)?;
                info!("{name} {strength}: {} accuracy {:.4}", protocol.code(), r.overall_accuracy);
                w.serialize(RobustnessRow {
                    perturbation: name,
                    strength,
                    protocol: protocol.code(),
                    classifier: r.classifier.clone(),
                    accuracy: r.overall_accuracy,
                    best_accuracy: r.best_accuracy,
                    stable_accuracy: r.stable_accuracy,
                })
                .map_err(|e| Error::Serde(e.to_string()))?;
                s.points.push((strength, r.overall_accuracy));
            }
        }
        plots::line_chart(
            &dir.join(format!("robustness_{name}.svg")),
            &format!("Accuracy under {name}"),
            x_label,
            "accuracy",
            &series,
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn cmd_plot(cfg: &ExperimentConfig, ckpt: Option<&Path>, dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(cfg, ckpt)?;
    let data = cfg.load_data()?;
    let features = extract_embeddings(&ckpt.feature_extractor()?, &data)?;
    let proj = project_2d(&features)?;
    let names: Vec<&str> = data.items().iter().map(|s| data.class_names()[s.label].as_str()).collect();
    write_projection_csv(&dir.join("projection.csv"), &data.ids(), &proj.coords, &names)?;
    plots::scatter_chart(&dir.join("projection.svg"), "Embedding projection", &proj.coords, &data.labels(), data.class_names())
}

fn cmd_synth(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = crate::data::synth_generate(&cfg.synth)?;
    let root = dir.join("images");
    for s in data.items() {
        let class = &data.class_names()[s.label];
        let file = s.id.rsplit('/').next().unwrap_or(&s.id);
        let class_dir = root.join(class);
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let path = class_dir.join(format!("{file}.png"));
        let px: Vec<u16> = s.image.pixels().iter().map(|&v| (v * 65535.0).round() as u16).collect();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(s.image.width() as u32, s.image.height() as u32, px)
            .ok_or_else(|| Error::input("pixel buffer size mismatch"))?;
        img.save(&path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    }
    info!("wrote {} images under {}", data.len(), root.display());
    Ok(())
}
