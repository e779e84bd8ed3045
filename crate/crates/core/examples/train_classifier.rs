//! Train the multi-label classifier on image-level labels only, print the
//! loss curve and held-out accuracy, and save a checkpoint.
//!
//! cargo run --release --example train_classifier -- [num_images] [iterations]

use wsolkit::classifier::{load_checkpoint, save_checkpoint, train_classifier, ClassifierTrainConfig};
use wsolkit::dataset::{generate_synthetic, SyntheticConfig};

fn main() -> wsolkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let train = generate_synthetic(&SyntheticConfig { num_images: n, seed: 1, ..Default::default() })?;
    let test = generate_synthetic(&SyntheticConfig {
        num_images: 50,
        seed: 2,
        id_prefix: "test".into(),
        ..Default::default()
    })?;
    let cfg = ClassifierTrainConfig { iterations, seed: 1, ..Default::default() };
    let (model, report) = train_classifier(&train, &cfg)?;
    let step = (iterations / 10).max(1);
    for start in (0..iterations).step_by(step) {
        println!("iter {start:4}  loss {:.4}", report.window_mean(start, step));
    }

    let (mut right, mut total) = (0, 0);
    for img in &test.images {
        let p = model.predict(&img.image)?;
        for c in 0..test.num_classes {
            total += 1;
            if (p.present(c) >= 0.5) == img.has_class(c) {
                right += 1;
            }
        }
    }
    println!("held-out label accuracy {:.3} ({right}/{total})", right as f64 / total as f64);

    let path = std::env::temp_dir().join("wsolkit-example.wscm");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.predict(&test.images[0].image)?, model.predict(&test.images[0].image)?);
    println!("checkpoint round-trips: {}", path.display());
    Ok(())
}
