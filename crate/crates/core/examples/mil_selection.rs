//! Multiple-instance selection over mined proposals: positive images are
//! bags, the SVM picks one box per bag, and alternation drives the
//! objective down.
//!
//! cargo run --release --example mil_selection -- [num_images]

use wsolkit::classifier::{train_classifier, ClassifierTrainConfig};
use wsolkit::dataset::{generate_proposal_set, generate_synthetic, mean_pixel, ProposalConfig, SyntheticConfig};
use wsolkit::eval::corloc;
use wsolkit::mil::MilConfig;
use wsolkit::mining::{mine, score_dataset, MiningConfig};
use wsolkit::pipeline::{first_per_image, run_mil, top_mined};

fn main() -> wsolkit::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let ds = generate_synthetic(&SyntheticConfig { num_images: n, seed: 5, ..Default::default() })?;
    let (model, _) = train_classifier(&ds, &ClassifierTrainConfig { seed: 5, ..Default::default() })?;
    let props = generate_proposal_set(&ds, &ProposalConfig::default(), 5);
    let cfg = MiningConfig::default();
    let scores = score_dataset(&model, &ds, &props, mean_pixel(&ds)?, &cfg)?;
    let mined = mine(&scores, &cfg)?;

    let outcome = run_mil(&model, &ds, &mined, &MilConfig::default())?;
    let before = top_mined(&ds, &mined);
    for (c, objs) in outcome.objectives.iter().enumerate() {
        let trace: Vec<String> = objs.iter().map(|o| format!("{o:.3e}")).collect();
        println!("class {c}: objective {} (converged {})", trace.join(" -> "), outcome.converged[c]);
        let top1 = first_per_image(before.iter().map(|s| (s.class, s.image_id.as_str(), s.bbox)), c);
        let picked = first_per_image(outcome.selected.iter().map(|s| (s.class, s.image_id.as_str(), s.bbox)), c);
        println!(
            "  CorLoc top mined box {:.3} -> MIL pick {:.3}",
            corloc(&top1, &ds, c, 0.5).value,
            corloc(&picked, &ds, c, 0.5).value
        );
    }
    println!("{} boxes selected at tau = 1", outcome.selected.len());
    Ok(())
}
