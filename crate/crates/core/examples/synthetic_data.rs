//! Render a synthetic two-class scene set, write it as a manifest plus PNGs,
//! and report how well the dense proposal grid covers the objects.
//!
//! cargo run --release --example synthetic_data -- [num_images] [out_dir]

use std::path::PathBuf;

use wsolkit::dataset::{generate_proposal_set, generate_synthetic, save_manifest, ImageFormat, ProposalConfig, SyntheticConfig};
use wsolkit::eval::iou;

fn main() -> wsolkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("wsolkit-synthetic"));

    let ds = generate_synthetic(&SyntheticConfig {
        num_images: n,
        seed: 7,
        ..Default::default()
    })?;
    for img in ds.images.iter().take(5) {
        let objects: Vec<String> = img.gt.iter().map(|g| format!("class {} at {}", g.class, g.bbox)).collect();
        println!("{}  labels {:?}  {}", img.id, img.labels, objects.join(", "));
    }
    for c in 0..ds.num_classes {
        println!("class {c}: {} positive images", ds.positives(c).len());
    }

    let props = generate_proposal_set(&ds, &ProposalConfig::default(), 7);
    let (mut covered, mut total, mut count) = (0, 0, 0);
    for img in &ds.images {
        let p = &props[&img.id];
        count += p.len();
        for g in &img.gt {
            total += 1;
            if p.iter().any(|q| iou(&q.bbox, &g.bbox) >= 0.5) {
                covered += 1;
            }
        }
    }
    println!(
        "{:.0} proposals per image; {covered}/{total} objects have a proposal at IoU >= 0.5",
        count as f64 / ds.len() as f64
    );

    save_manifest(&ds, &out.join("manifest.json"), ImageFormat::Png)?;
    println!("wrote {}", out.join("manifest.json").display());
    Ok(())
}
