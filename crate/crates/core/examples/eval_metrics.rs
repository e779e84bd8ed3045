//! The evaluation metrics on a hand-built scene: NMS, precision/recall and
//! AP, CorLoc, CorLoc@M and the false-positive breakdown.
//!
//! cargo run --example eval_metrics

use std::collections::BTreeMap;

use wsolkit::dataset::{Dataset, GtBox, LabeledImage};
use wsolkit::detector::{nms, Detection};
use wsolkit::eval::{average_precision, corloc, corloc_at_m, error_analysis, ApMethod, EvalConfig};
use wsolkit::image::Image;
use wsolkit::BoundingBox;

fn b(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).expect("valid box")
}

fn main() -> wsolkit::Result<()> {
    let scene = |id: &str, gt: Vec<(usize, BoundingBox)>| {
        let mut labels = vec![0u8; 2];
        gt.iter().for_each(|&(c, _)| labels[c] = 1);
        LabeledImage {
            id: id.into(),
            image: Image::filled(64, 64, [0.5; 3]),
            labels,
            gt: gt.into_iter().map(|(class, bbox)| GtBox { class, bbox }).collect(),
        }
    };
    let ds = Dataset {
        num_classes: 2,
        images: vec![
            scene("a", vec![(0, b(4, 4, 24, 24)), (1, b(36, 36, 60, 60))]),
            scene("b", vec![(0, b(10, 30, 40, 60))]),
        ],
    };

    // three overlapping candidates around the class-0 object in "a"
    let cand = [b(4, 4, 24, 24), b(5, 5, 25, 25), b(2, 6, 22, 26), b(36, 36, 60, 60)];
    let scores = [0.9, 0.85, 0.7, 0.6];
    let kept = nms(&cand, &scores, 0.5);
    println!("NMS keeps {kept:?} of {} candidates", cand.len());

    let det = |id: &str, bbox, class, score| Detection { image_id: id.into(), bbox, class, score };
    let dets = vec![
        det("a", b(4, 4, 24, 24), 0, 0.95),   // correct
        det("a", b(6, 4, 26, 22), 0, 0.90),   // duplicate of a found object
        det("a", b(36, 36, 60, 60), 0, 0.80), // lands on a class-1 object
        det("b", b(12, 32, 38, 58), 0, 0.70), // correct
        det("b", b(0, 0, 8, 8), 0, 0.60),     // background
    ];
    let curve = average_precision(&dets, &ds, 0, 0.5, ApMethod::AllPoints).expect("class 0 has objects");
    for (i, (p, r)) in curve.precision.iter().zip(&curve.recall).enumerate() {
        println!("rank {}: tp {:5}  precision {p:.3}  recall {r:.3}", i + 1, curve.tp[i]);
    }
    println!("AP all-points {:.4}", curve.ap);
    let voc = average_precision(&dets, &ds, 0, 0.5, ApMethod::ElevenPoint).expect("class 0 has objects");
    println!("AP 11-point   {:.4}", voc.ap);

    let cfg = EvalConfig {
        similar_groups: vec![vec![0, 1]],
        ..Default::default()
    };
    let (kinds, counts) = error_analysis(&dets, &ds, 0, &cfg);
    println!("per detection {kinds:?}");
    println!("breakdown {counts:?}");

    let top1: BTreeMap<String, BoundingBox> = [("a".to_string(), b(36, 36, 60, 60)), ("b".to_string(), b(12, 32, 38, 58))].into();
    println!("CorLoc class 0 with one box per image: {:.2}", corloc(&top1, &ds, 0, 0.5).value);
    let ranked: BTreeMap<String, Vec<BoundingBox>> = [
        ("a".to_string(), vec![b(36, 36, 60, 60), b(4, 4, 24, 24)]),
        ("b".to_string(), vec![b(12, 32, 38, 58)]),
    ]
    .into();
    for m in [1, 2] {
        println!("CorLoc@{m}: {:.2}", corloc_at_m(&ranked, &ds, 0, m, 0.5)?.value);
    }
    Ok(())
}
