//! Property tests for the invariants of every module.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use wsolkit::classifier::{expand_labels, ProbabilityVector};
use wsolkit::dataset::{Dataset, GtBox, LabeledImage};
use wsolkit::detector::{decode, encode, nms, Band, Detection, RoiBands};
use wsolkit::eval::{
    average_precision, corloc, corloc_at_m, error_analysis, recall_at_m, ApMethod, EvalConfig,
};
use wsolkit::image::Image;
use wsolkit::mil::{mil_train, smoothed_hinge, MilConfig};
use wsolkit::mining::{box_response, normalize_and_fuse, ranking_order, top_m_select, ActivationMap, FusionWeights, ScoredProposal};
use wsolkit::refine::{segment_box, tighten_box, RefineConfig};
use wsolkit::BoundingBox;

const SIDE: u32 = 64;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0..SIDE - 1, 0..SIDE - 1, 1..SIDE, 1..SIDE).prop_map(|(x, y, w, h)| {
        BoundingBox::new(x, y, (x + w).min(SIDE), (y + h).min(SIDE)).unwrap()
    })
}

fn dataset(gts: &[Vec<(usize, BoundingBox)>], num_classes: usize) -> Dataset {
    Dataset {
        num_classes,
        images: gts
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut labels = vec![0u8; num_classes];
                for (c, _) in g {
                    labels[*c] = 1;
                }
                LabeledImage {
                    id: format!("im{i}"),
                    image: Image::filled(SIDE, SIDE, [0.5; 3]),
                    labels,
                    gt: g.iter().map(|&(class, bbox)| GtBox { class, bbox }).collect(),
                }
            })
            .collect(),
    }
}

fn gt_sets() -> impl Strategy<Value = Vec<Vec<(usize, BoundingBox)>>> {
    prop::collection::vec(prop::collection::vec((0..2usize, bbox()), 0..3), 1..5)
}

fn detections(n_images: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0..n_images, 0..2usize, bbox(), 0.0..1.0f64), 0..12).prop_map(|v| {
        v.into_iter()
            .map(|(i, class, bbox, score)| Detection {
                image_id: format!("im{i}"),
                bbox,
                class,
                score,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn iou_is_a_symmetric_ratio(a in bbox(), b in bbox()) {
        let v = a.iou(&b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, b.iou(&a));
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn grid_mapping_covers_the_box(b in bbox(), mw in 4usize..40, mh in 4usize..40) {
        let g = b.to_grid(SIDE, SIDE, mw, mh).unwrap();
        // project grid cell edges back to pixels
        let sx = SIDE as f64 / mw as f64;
        let sy = SIDE as f64 / mh as f64;
        prop_assert!(g.x1 as f64 * sx <= b.x1 as f64 + 1e-9);
        prop_assert!(g.y1 as f64 * sy <= b.y1 as f64 + 1e-9);
        prop_assert!(g.x2 as f64 * sx >= b.x2 as f64 - 1e-9);
        prop_assert!(g.y2 as f64 * sy >= b.y2 as f64 - 1e-9);
    }

    #[test]
    fn integral_box_sum_matches_naive_sum(
        w in 1usize..24, h in 1usize..24,
        seed in any::<u64>(),
        corners in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
    ) {
        let values = common::dyadic_values(w * h, seed);
        let map = ActivationMap::new(0, w, h, values.clone());
        let (ax, ay, bx, by) = corners;
        let x1 = (ax * w as f64) as u32;
        let y1 = (ay * h as f64) as u32;
        let x2 = (x1 + 1 + (bx * (w as f64 - x1 as f64)) as u32).min(w as u32);
        let y2 = (y1 + 1 + (by * (h as f64 - y1 as f64)) as u32).min(h as u32);
        let b = BoundingBox::new(x1, y1, x2, y2).unwrap();
        let naive: f64 = (y1..y2).flat_map(|y| (x1..x2).map(move |x| (x, y)))
            .map(|(x, y)| values[y as usize * w + x as usize]).sum();
        prop_assert_eq!(box_response(&map, &b), naive);
    }

    #[test]
    fn fusion_is_normalized_and_ranked(
        raw in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..30),
        wc in 0.0..10.0f64, wa in 0.01..10.0f64, m in 1usize..40,
    ) {
        let b = BoundingBox::new(0, 0, 4, 4).unwrap();
        let pool: Vec<ScoredProposal> = raw.iter().enumerate()
            .map(|(i, &(c, a))| ScoredProposal::raw(i, b, 0, c, a)).collect();
        let (ranked, _) = normalize_and_fuse(pool, FusionWeights { contrast: wc, activation: wa }).unwrap();
        prop_assert_eq!(ranked.len(), raw.len());
        for p in &ranked {
            prop_assert!((0.0..=1.0).contains(&p.contrast) && (0.0..=1.0).contains(&p.activation));
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p.fused));
        }
        for w in ranked.windows(2) {
            prop_assert_ne!(ranking_order(&w[0], &w[1]), std::cmp::Ordering::Greater);
        }
        let top = top_m_select(&ranked, m);
        prop_assert_eq!(top.len(), m.min(ranked.len()));
        prop_assert_eq!(&top[..], &ranked[..top.len()]);
    }

    #[test]
    fn nms_keeps_a_separated_subset(
        boxes in prop::collection::vec(bbox(), 0..30),
        seed in any::<u64>(), thr in 0.05..1.0f64,
    ) {
        let scores = common::uniform_values(boxes.len(), seed);
        let keep = nms(&boxes, &scores, thr);
        let mut seen = keep.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), keep.len());
        for (i, &a) in keep.iter().enumerate() {
            prop_assert!(a < boxes.len());
            for &b in &keep[i + 1..] {
                prop_assert!(boxes[a].iou(&boxes[b]) < thr);
            }
        }
        // every dropped box is covered by a kept box scoring at least as high
        for j in (0..boxes.len()).filter(|j| !keep.contains(j)) {
            prop_assert!(keep.iter().any(|&k| scores[k] >= scores[j] && boxes[k].iou(&boxes[j]) >= thr));
        }
    }

    #[test]
    fn box_regression_round_trips(p in bbox(), t in bbox()) {
        let d = decode(&p, &encode(&p, &t));
        for (got, want) in d.iter().zip([t.x1, t.y1, t.x2, t.y2]) {
            prop_assert!((got - want as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn roi_bands_partition_the_unit_interval(o in 0.0..=1.0f64, bg in 0.0..0.5f64, fg in 0.5..=1.0f64) {
        let bands = RoiBands { foreground: fg, background: bg };
        let expected = if o >= fg { Band::Foreground } else if o >= bg { Band::Background } else { Band::Discarded };
        prop_assert_eq!(bands.band(o), expected);
    }

    #[test]
    fn ap_depends_only_on_the_ranking(gts in gt_sets(), dets in detections(4)) {
        let ds = dataset(&gts, 2);
        for class in 0..2 {
            let Some(base) = average_precision(&dets, &ds, class, 0.5, ApMethod::AllPoints) else { continue };
            prop_assert!((0.0..=1.0).contains(&base.ap));
            let warped: Vec<Detection> = dets.iter()
                .map(|d| Detection { score: (3.0 * d.score).exp() + 1.0, ..d.clone() }).collect();
            let w = average_precision(&warped, &ds, class, 0.5, ApMethod::AllPoints).unwrap();
            prop_assert!((w.ap - base.ap).abs() < 1e-12);
            // a lowest-scoring detection that overlaps nothing
            let mut more = dets.clone();
            more.push(Detection { image_id: "im0".into(), bbox: BoundingBox::new(0, 0, 1, 1).unwrap(), class, score: -1.0 });
            let gt_tiny = ds.images[0].gt_of(class).any(|g| g.iou(&BoundingBox::new(0, 0, 1, 1).unwrap()) > 0.0);
            if !gt_tiny {
                let m = average_precision(&more, &ds, class, 0.5, ApMethod::AllPoints).unwrap();
                prop_assert!(m.ap <= base.ap + 1e-12);
            }
        }
    }

    #[test]
    fn error_categories_are_exhaustive(gts in gt_sets(), dets in detections(4)) {
        let ds = dataset(&gts, 2);
        let cfg = EvalConfig::default();
        for class in 0..2 {
            let (kinds, counts) = error_analysis(&dets, &ds, class, &cfg);
            let n = dets.iter().filter(|d| d.class == class).count();
            prop_assert_eq!(kinds.len(), n);
            prop_assert_eq!(counts.total(), n);
            if let Some(curve) = average_precision(&dets, &ds, class, cfg.iou_threshold, cfg.ap_method) {
                prop_assert_eq!(counts.cor, curve.tp.iter().filter(|&&t| t).count());
            }
        }
    }

    #[test]
    fn hit_rates_grow_with_m(gts in gt_sets(), lists in prop::collection::vec(prop::collection::vec(bbox(), 1..8), 4)) {
        let ds = dataset(&gts, 2);
        let ranked: BTreeMap<String, Vec<BoundingBox>> = lists.iter().enumerate()
            .take(ds.len()).map(|(i, l)| (format!("im{i}"), l.clone())).collect();
        for class in 0..2 {
            let pos: BTreeMap<String, Vec<BoundingBox>> = ranked.iter()
                .filter(|(id, _)| ds.get(id).unwrap().has_class(class))
                .map(|(k, v)| (k.clone(), v.clone())).collect();
            let mut last = (0.0, 0.0);
            for m in 1..9 {
                let c = corloc_at_m(&pos, &ds, class, m, 0.5).unwrap().value;
                let r = recall_at_m(&pos, &ds, class, m, 0.5).unwrap();
                prop_assert!(c >= last.0 && r >= last.1, "m={} corloc {} -> {}, recall {} -> {}", m, last.0, c, last.1, r);
                last = (c, r);
            }
            let top1: BTreeMap<String, BoundingBox> = pos.iter().map(|(k, v)| (k.clone(), v[0])).collect();
            prop_assert_eq!(corloc_at_m(&pos, &ds, class, 1, 0.5).unwrap(), corloc(&top1, &ds, class, 0.5));
        }
    }

    #[test]
    fn segment_masks_stay_in_the_working_region(
        seed in any::<u64>(), b in bbox(), expansion in 0.0..0.6f64,
    ) {
        let img = common::blob_image(SIDE, SIDE, seed);
        let cfg = RefineConfig { expansion, ..RefineConfig::default() };
        let mask = segment_box(&img, &b, &cfg).unwrap();
        let region = b.expanded(expansion, SIDE, SIDE);
        prop_assert!(mask.count() > 0);
        for y in 0..SIDE {
            for x in 0..SIDE {
                if mask.get(x, y) {
                    prop_assert!(region.contains(x, y));
                }
            }
        }
        let t = tighten_box(&mask).unwrap();
        prop_assert!(t.x1 >= region.x1 && t.y1 >= region.y1 && t.x2 <= region.x2 && t.y2 <= region.y2);
        let inside = (t.y1..t.y2).flat_map(|y| (t.x1..t.x2).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y)).count();
        prop_assert_eq!(inside, mask.count());
    }

    #[test]
    fn smoothed_hinge_is_a_smooth_decreasing_surrogate(z in -6.0..6.0f64) {
        let (l, d) = smoothed_hinge(z);
        prop_assert!(l >= 0.0 && d <= 0.0 && d >= -1.0);
        prop_assert!(l >= (1.0 - z).max(0.0) - 0.5 - 1e-12);
        let e = 1e-7;
        prop_assert!((smoothed_hinge(z + e).0 - l).abs() <= 1.0001 * e);
    }

    #[test]
    fn expanded_labels_and_probabilities_are_complementary(
        y in prop::collection::vec(0u8..2, 1..6), logits in prop::collection::vec(-30.0..30.0f64, 6),
    ) {
        let t = expand_labels(&y);
        prop_assert_eq!(t.0.len(), 2 * y.len());
        for c in 0..y.len() {
            prop_assert_eq!(t.0[2 * c] + t.0[2 * c + 1], 1);
            prop_assert_eq!(t.present(c), y[c] == 1);
        }
        let p = ProbabilityVector::from_logits(&logits);
        for c in 0..logits.len() {
            prop_assert!((p.present(c) + p.absent(c) - 1.0).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mil_objective_never_increases(seed in any::<u64>()) {
        let bags = common::random_mil_problem(seed);
        let (_, sel, report) = mil_train(&bags, &MilConfig { lambda: 0.01, ..MilConfig::default() }).unwrap();
        for w in report.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", report.objectives);
        }
        for (bag, s) in bags.iter().zip(&sel) {
            if bag.is_positive() {
                prop_assert_eq!(s.count(), 1);
            } else {
                prop_assert_eq!(s.count(), 0);
            }
        }
    }
}
