//! Stage-by-stage orchestration: a single TOML config, persisted artifacts
//! in a work directory, and a manifest per stage recording input/output
//! hashes, the chained config hash, the seed and wall time.

mod config;
mod manifest;
mod report;
mod stages;

pub use config::{derive_seed, DataConfig, Paths, PipelineConfig, ReportConfig, StageToggles};
pub use manifest::{hash_path, sha256_hex, StageManifest};
pub use report::{
    ablation, build_report, compare_strategies, default_variants, evaluate, render_tables, write_report,
    AblationData, AblationRow, AtM, ClassEval, EvalReport, Report, StrategyAtM, StrategyRow, Variant,
};
pub use stages::{
    config_hash, first_per_image, refine_selected, run_all, run_mil, run_stage, top_mined, MilOutcome, RunOptions,
    Stage,
};

use crate::error::Error;

/// Process exit status for an error: 2 for configuration problems, 3 for
/// missing artifacts, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ConfigMismatch { .. } => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 1,
    }
}
