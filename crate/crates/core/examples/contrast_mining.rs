//! Score every proposal by mask-out contrast and activation, fuse the two,
//! and measure how often the top-ranked box hits an object.
//!
//! cargo run --release --example contrast_mining -- [num_images]

use std::collections::BTreeMap;

use wsolkit::classifier::{train_classifier, ClassifierTrainConfig};
use wsolkit::dataset::{generate_proposal_set, generate_synthetic, mean_pixel, ProposalConfig, SyntheticConfig};
use wsolkit::eval::{corloc_at_m, recall_at_m};
use wsolkit::mining::{mine, score_dataset, MiningConfig};

fn main() -> wsolkit::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let ds = generate_synthetic(&SyntheticConfig { num_images: n, seed: 4, ..Default::default() })?;
    let (model, _) = train_classifier(&ds, &ClassifierTrainConfig { seed: 4, ..Default::default() })?;
    let props = generate_proposal_set(&ds, &ProposalConfig::default(), 4);
    let cfg = MiningConfig::default();
    // one scoring pass; every variant below re-ranks the same raw scores
    let scores = score_dataset(&model, &ds, &props, mean_pixel(&ds)?, &cfg)?;

    let variants = [
        ("contrast", MiningConfig { use_activation: false, ..cfg.clone() }),
        ("activation", MiningConfig { use_contrast: false, ..cfg.clone() }),
        ("fused 10:1", cfg.clone()),
    ];
    println!("{:12} {:>7} {:>7} {:>7} {:>9}", "ranking", "class", "@1", "@10", "recall@10");
    for (name, v) in &variants {
        let mined = mine(&scores, v)?;
        for c in 0..ds.num_classes {
            let ranked: BTreeMap<String, _> = mined
                .iter()
                .filter(|((_, k), _)| *k == c)
                .map(|((id, _), list)| (id.clone(), list.iter().map(|p| p.bbox).collect::<Vec<_>>()))
                .collect();
            println!(
                "{name:12} {c:>7} {:>7.3} {:>7.3} {:>9.3}",
                corloc_at_m(&ranked, &ds, c, 1, 0.5)?.value,
                corloc_at_m(&ranked, &ds, c, 10, 0.5)?.value,
                recall_at_m(&ranked, &ds, c, 10, 0.5)?,
            );
        }
    }
    Ok(())
}
