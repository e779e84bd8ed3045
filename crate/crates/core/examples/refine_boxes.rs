//! Segmentation-based tightening: split each box into foreground and
//! background colour clusters and shrink it to the foreground extent.
//! Works directly on ground-truth boxes loosened by a margin, so no model
//! is needed.
//!
//! cargo run --release --example refine_boxes -- [num_images] [mask_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use wsolkit::dataset::{generate_synthetic, SyntheticConfig};
use wsolkit::eval::corloc;
use wsolkit::mil::SelectedInstance;
use wsolkit::pipeline::refine_selected;
use wsolkit::refine::RefineConfig;
use wsolkit::BoundingBox;

fn main() -> wsolkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let mask_dir = args.next().map(PathBuf::from);
    let ds = generate_synthetic(&SyntheticConfig { num_images: n, seed: 6, ..Default::default() })?;

    // loose boxes: each object padded by 60% of its size on every side
    let loose: Vec<SelectedInstance> = ds
        .images
        .iter()
        .flat_map(|img| {
            img.gt.iter().map(move |g| {
                let (w, h) = (img.image.width(), img.image.height());
                let (px, py) = (g.bbox.width() * 3 / 5, g.bbox.height() * 3 / 5);
                let b = BoundingBox::new(
                    g.bbox.x1.saturating_sub(px),
                    g.bbox.y1.saturating_sub(py),
                    (g.bbox.x2 + px).min(w),
                    (g.bbox.y2 + py).min(h),
                )
                .expect("padded box is valid");
                SelectedInstance { class: g.class, image_id: img.id.clone(), bbox: b, score: 1.0 }
            })
        })
        .collect();
    let refined = refine_selected(&ds, &loose, &RefineConfig::default(), true)?;

    for c in 0..ds.num_classes {
        let before: BTreeMap<String, BoundingBox> =
            loose.iter().filter(|s| s.class == c).map(|s| (s.image_id.clone(), s.bbox)).collect();
        let after: BTreeMap<String, BoundingBox> = refined
            .iter()
            .filter(|(r, _)| r.class == c)
            .map(|(r, _)| (r.image_id.clone(), r.bbox))
            .collect();
        println!(
            "class {c}: CorLoc loose {:.3} -> refined {:.3}",
            corloc(&before, &ds, c, 0.5).value,
            corloc(&after, &ds, c, 0.5).value
        );
    }
    let fallbacks = refined.iter().filter(|(r, _)| r.fallback).count();
    println!("{} boxes refined, {fallbacks} fell back to the input box", refined.len());
    for (r, _) in refined.iter().take(5) {
        println!("  {} class {}: {} -> {}", r.image_id, r.class, r.source, r.bbox);
    }

    if let Some(dir) = mask_dir {
        std::fs::create_dir_all(&dir)?;
        for (k, (r, mask)) in refined.iter().enumerate().take(20) {
            if let Some(m) = mask {
                m.save_png(&dir.join(format!("{k:03}_{}_c{}.png", r.image_id, r.class)))?;
            }
        }
        println!("masks in {}", dir.display());
    }
    Ok(())
}
