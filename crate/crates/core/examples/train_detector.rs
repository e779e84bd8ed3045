//! Train the detection head on pseudo ground truth and evaluate it on a
//! held-out split. Pseudo boxes here are the top fused mining box per
//! positive image and class, so the example stays fast.
//!
//! cargo run --release --example train_detector -- [num_images]

use wsolkit::classifier::{train_classifier, ClassifierTrainConfig};
use wsolkit::dataset::{generate_proposal_set, generate_synthetic, mean_pixel, ProposalConfig, SyntheticConfig};
use wsolkit::detector::{
    build_roi_set, detect_dataset, sample_features, train_detector, DetectConfig, DetectorTrainConfig, RoiBands,
};
use wsolkit::eval::{average_precision, error_analysis, mean_ap, ApMethod, EvalConfig};
use wsolkit::mining::{mine, score_dataset, MiningConfig};
use wsolkit::pipeline::{refine_selected, top_mined};
use wsolkit::refine::RefineConfig;

fn main() -> wsolkit::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let train = generate_synthetic(&SyntheticConfig { num_images: n, seed: 8, ..Default::default() })?;
    let test = generate_synthetic(&SyntheticConfig {
        num_images: 40,
        seed: 9,
        id_prefix: "test".into(),
        ..Default::default()
    })?;
    let (backbone, _) = train_classifier(&train, &ClassifierTrainConfig { seed: 8, ..Default::default() })?;
    let props = generate_proposal_set(&train, &ProposalConfig::default(), 8);
    let cfg = MiningConfig::default();
    let scores = score_dataset(&backbone, &train, &props, mean_pixel(&train)?, &cfg)?;
    let mined = mine(&scores, &cfg)?;
    let pseudo: Vec<_> = refine_selected(&train, &top_mined(&train, &mined), &RefineConfig::default(), true)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();

    let rois = build_roi_set(&props, &pseudo, RoiBands::default());
    let feats = sample_features(&backbone, &train, &rois)?;
    let (head, report) = train_detector(&rois, &feats, train.num_classes, &DetectorTrainConfig::default())?;
    let last = report.loss_history.len().saturating_sub(100);
    println!(
        "{} foreground / {} background RoIs; loss {:.3} -> {:.3}",
        report.foreground,
        report.background,
        report.window_mean(0, 100),
        report.window_mean(last, 100)
    );

    let test_props = generate_proposal_set(&test, &ProposalConfig::default(), 9);
    let dets = detect_dataset(&head, &backbone, &test, &test_props, &DetectConfig::default())?;
    let curves: Vec<_> = (0..test.num_classes)
        .map(|c| average_precision(&dets, &test, c, 0.5, ApMethod::AllPoints))
        .collect();
    for (c, curve) in curves.iter().enumerate() {
        let (_, errs) = error_analysis(&dets, &test, c, &EvalConfig::default());
        println!("class {c}: AP {:.3}  errors {errs:?}", curve.as_ref().map_or(f64::NAN, |k| k.ap));
    }
    println!("{} detections, mAP {:.3}", dets.len(), mean_ap(&curves).unwrap_or(f64::NAN));
    Ok(())
}
