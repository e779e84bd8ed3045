use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use wsolkit::mining::MaskOutStrategy;
use wsolkit::pipeline::{exit_code, run_stage, PipelineConfig, RunOptions, Stage};
use wsolkit::{Error, Result};

#[derive(Parser)]
#[command(name = "wsolkit", version, about = "Weakly supervised object localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate (or ingest) the train/test splits and their proposals.
    GenData,
    /// Train the multi-label classifier.
    TrainCls,
    /// Score proposals and keep the top M per image and class.
    Mine,
    /// Select positive instances with multiple-instance learning.
    Mil,
    /// Tighten selected boxes by segmentation.
    Refine,
    /// Train the detection head on the refined boxes.
    TrainDet,
    /// Run the detector on the test split.
    Detect,
    /// CorLoc, CorLoc@M, AP and error analysis.
    Eval,
    /// Consolidated report with the ablation table.
    Report,
    /// Every stage in order.
    All,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set mil.lambda=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run even if upstream artifacts came from a different config.
    #[arg(long, global = true)]
    force: bool,
    /// Disable activation scores in mining.
    #[arg(long, global = true)]
    no_as: bool,
    #[arg(long, global = true)]
    no_mil: bool,
    #[arg(long, global = true)]
    no_seg: bool,
    #[arg(long, value_name = "in|in-out|whole-out", global = true)]
    mask_out: Option<MaskOutStrategy>,
    /// Write segmentation masks as PNGs during `refine`.
    #[arg(long, global = true)]
    dump_masks: bool,
    /// Include the mask-out strategy comparison in `report`.
    #[arg(long, global = true)]
    strategies: bool,
    /// Mined proposals per image and class (M).
    #[arg(long, global = true)]
    top_m: Option<usize>,
    /// Size-prior weight of the activation score.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Contrast:activation fusion ratio, e.g. `10:1`.
    #[arg(long, value_name = "C:A", global = true)]
    fusion: Option<String>,
    #[arg(long, global = true)]
    mil_lambda: Option<f64>,
    /// MIL score threshold for extra positives.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    cls_lr: Option<f64>,
    #[arg(long, global = true)]
    cls_iterations: Option<usize>,
    #[arg(long, global = true)]
    cls_batch: Option<usize>,
    #[arg(long, global = true)]
    det_iterations: Option<usize>,
    /// Detection score threshold.
    #[arg(long, global = true)]
    score_threshold: Option<f64>,
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    /// Overlap for CorLoc and AP.
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
    /// Overlap t for CorLoc@M and recall@M.
    #[arg(long, global = true)]
    mining_overlap: Option<f64>,
    /// Repeat for more detail.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

impl Common {
    fn overrides(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push(format!("{k}={v}"));
        if let Some(s) = self.seed {
            push("seed", s.to_string());
        }
        if let Some(w) = &self.workdir {
            push("paths.workdir", toml_str(&w.to_string_lossy()));
        }
        if self.no_as {
            push("mining.use_activation", "false".into());
        }
        if self.no_mil {
            push("stages.mil", "false".into());
        }
        if self.no_seg {
            push("stages.seg", "false".into());
        }
        if self.dump_masks {
            push("stages.dump_masks", "true".into());
        }
        if self.strategies {
            push("report.strategies", "true".into());
        }
        if let Some(s) = self.mask_out {
            push("mining.strategy", toml_str(s.name()));
        }
        if let Some(f) = &self.fusion {
            let (c, a) = f
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("--fusion expects C:A, got `{f}`")))?;
            push("mining.fusion.contrast", c.trim().into());
            push("mining.fusion.activation", a.trim().into());
        }
        for (key, v) in [
            ("mining.top_m", self.top_m.map(|v| v.to_string())),
            ("mining.alpha", self.alpha.map(float)),
            ("mil.lambda", self.mil_lambda.map(float)),
            ("mil.select_threshold", self.tau.map(float)),
            ("classifier.learning_rate", self.cls_lr.map(float)),
            ("classifier.iterations", self.cls_iterations.map(|v| v.to_string())),
            ("classifier.batch_size", self.cls_batch.map(|v| v.to_string())),
            ("detector.iterations", self.det_iterations.map(|v| v.to_string())),
            ("detect.score_threshold", self.score_threshold.map(float)),
            ("detect.nms_iou", self.nms_iou.map(float)),
            ("eval.iou_threshold", self.iou_threshold.map(float)),
            ("eval.mining_overlap", self.mining_overlap.map(float)),
        ] {
            if let Some(v) = v {
                push(key, v);
            }
        }
        Ok(out)
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.into()).to_string()
}

/// TOML float literal; handles `inf` and exponents.
fn float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Ok(s) = std::env::var("WSOLKIT_SEED") {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("WSOLKIT_SEED must be an unsigned integer, got `{s}`")))?;
    }
    let mut sets = common.sets.clone();
    sets.extend(common.overrides()?);
    cfg.with_overrides(&sets)
}

fn stage_of(cmd: Command) -> Option<Stage> {
    Some(match cmd {
        Command::GenData => Stage::GenData,
        Command::TrainCls => Stage::TrainCls,
        Command::Mine => Stage::Mine,
        Command::Mil => Stage::Mil,
        Command::Refine => Stage::Refine,
        Command::TrainDet => Stage::TrainDet,
        Command::Detect => Stage::Detect,
        Command::Eval => Stage::Eval,
        Command::Report => Stage::Report,
        Command::All | Command::PrintConfig => return None,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let opts = RunOptions { force: cli.common.force };
    let stages: Vec<Stage> = match cli.command {
        Command::PrintConfig => {
            print!("{}", cfg.to_toml_string()?);
            return Ok(());
        }
        Command::All => Stage::ALL.to_vec(),
        other => vec![stage_of(other).expect("stage command")],
    };
    for stage in stages {
        let m = run_stage(&cfg, stage, &opts)?;
        println!("{stage}: {} output(s) in {:.1}s", m.outputs.len(), m.wall_time_secs);
        for path in m.outputs.keys() {
            println!("  {}", cfg.artifact(path).display());
        }
        match stage {
            Stage::Eval => println!("  {}", m.metrics),
            Stage::Report => {
                let md = std::fs::read_to_string(cfg.artifact("report.md"))?;
                print!("\n{md}");
            }
            _ => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
