//! Class activation maps and the activation score: render a CAM as ASCII
//! and compare the score of the object box with shifted and oversized boxes.
//!
//! cargo run --release --example activation_maps -- [num_images]

use wsolkit::classifier::{train_classifier, ClassifierTrainConfig};
use wsolkit::dataset::{generate_synthetic, SyntheticConfig};
use wsolkit::mining::{activation_score, class_activation_map};
use wsolkit::BoundingBox;

fn main() -> wsolkit::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(80);
    let ds = generate_synthetic(&SyntheticConfig { num_images: n, seed: 3, ..Default::default() })?;
    let (model, _) = train_classifier(&ds, &ClassifierTrainConfig { seed: 3, ..Default::default() })?;

    let img = &ds.images[0];
    let g = img.gt[0];
    let map = class_activation_map(&model, &img.image, g.class)?;
    println!("{} class {} object {}; CAM {}x{}", img.id, g.class, g.bbox, map.width, map.height);
    let max = map.values.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for y in 0..map.height {
        let row: String = (0..map.width)
            .map(|x| shades[((map.value(x, y).max(0.0) / max) * 9.0).round() as usize])
            .collect();
        println!("  |{row}|");
    }

    let (w, h) = (img.image.width(), img.image.height());
    let shift = (g.bbox.width() / 2).max(1);
    let candidates = [
        ("object", g.bbox),
        ("shifted", BoundingBox::new(g.bbox.x1.saturating_sub(shift), g.bbox.y1, g.bbox.x2.saturating_sub(shift).max(g.bbox.x1.saturating_sub(shift) + 1), g.bbox.y2)?),
        ("whole image", img.image.bounds()),
    ];
    for alpha in [0.0, 5.0] {
        for (name, b) in &candidates {
            let s = activation_score(&map, b, alpha, w, h);
            println!("alpha {alpha}: {name:12} {b}  score {:.4}", s.value);
        }
    }
    Ok(())
}
