//! Every stage end to end in a work directory, as `wsolkit all` would run
//! it, followed by the evaluation summary and the ablation table.
//!
//! cargo run --release --example full_pipeline -- [workdir] [num_images]

use std::path::PathBuf;

use wsolkit::pipeline::{run_all, PipelineConfig, RunOptions};

fn main() -> wsolkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let workdir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("wsolkit-pipeline"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);

    let mut cfg = PipelineConfig::default();
    cfg.paths.workdir = workdir;
    cfg.data.synthetic.num_images = n;
    cfg.data.test_images = n / 2;
    // same key syntax as `wsolkit --set`
    let cfg = cfg.with_overrides(&["detector.iterations=800".to_string()])?;

    for m in run_all(&cfg, &RunOptions::default())? {
        println!("{:10} {:6.1}s  {} output(s)", m.stage, m.wall_time_secs, m.outputs.len());
    }
    println!("\n{}", std::fs::read_to_string(cfg.artifact("report.md"))?);
    println!("manifests in {}", cfg.workdir().join("manifests").display());
    Ok(())
}
