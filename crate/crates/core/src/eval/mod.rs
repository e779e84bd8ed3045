//! Localization and detection metrics: IoU, CorLoc, CorLoc@M, recall@M,
//! average precision and false-positive categorization.

mod ap;
mod errors;

pub use ap::{average_precision, mean_ap, save_pr_curves, ApMethod, PrCurve};
pub use errors::{error_analysis, ErrorBreakdown, ErrorKind};

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Overlap at which a localization or detection counts as correct.
    pub iou_threshold: f64,
    /// Overlap `t` used by CorLoc@M and recall@M.
    pub mining_overlap: f64,
    /// Lower overlap bound for the Loc/Sim/Oth error categories.
    pub weak_overlap: f64,
    /// Groups of mutually similar classes; unlisted classes are singletons.
    pub similar_groups: Vec<Vec<usize>>,
    pub ap_method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            mining_overlap: 0.5,
            weak_overlap: 0.1,
            similar_groups: Vec::new(),
            ap_method: ApMethod::AllPoints,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_threshold", self.iou_threshold),
            ("mining_overlap", self.mining_overlap),
            ("weak_overlap", self.weak_overlap),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn similar(&self, a: usize, b: usize) -> bool {
        a != b && self.similar_groups.iter().any(|g| g.contains(&a) && g.contains(&b))
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorLoc {
    pub value: f64,
    pub correct: usize,
    pub positives: usize,
}

fn best_gt_iou(dataset: &Dataset, idx: usize, class: usize, b: &BoundingBox) -> f64 {
    dataset.images[idx]
        .gt_of(class)
        .map(|g| g.iou(b))
        .fold(0.0, f64::max)
}

/// Fraction of positive images whose predicted box overlaps a ground-truth
/// box of `class` by at least `threshold`. Positive images without a
/// prediction count as misses; predictions on other images are ignored.
pub fn corloc(
    localizations: &BTreeMap<String, BoundingBox>,
    dataset: &Dataset,
    class: usize,
    threshold: f64,
) -> CorLoc {
    let ranked: BTreeMap<String, Vec<BoundingBox>> = localizations
        .iter()
        .map(|(k, b)| (k.clone(), vec![*b]))
        .collect();
    corloc_hits(&ranked, dataset, class, 1, threshold)
}

fn corloc_hits(
    ranked: &BTreeMap<String, Vec<BoundingBox>>,
    dataset: &Dataset,
    class: usize,
    m: usize,
    threshold: f64,
) -> CorLoc {
    let mut ignored = 0;
    for id in ranked.keys() {
        if dataset.get(id).map_or(true, |i| !i.has_class(class)) {
            ignored += 1;
        }
    }
    if ignored > 0 {
        warn!("class {class}: ignored {ignored} localizations on non-positive images");
    }
    let positives = dataset.positives(class);
    let correct = positives
        .iter()
        .filter(|&&idx| {
            ranked.get(&dataset.images[idx].id).is_some_and(|boxes| {
                boxes
                    .iter()
                    .take(m)
                    .any(|b| best_gt_iou(dataset, idx, class, b) >= threshold)
            })
        })
        .count();
    CorLoc {
        value: if positives.is_empty() {
            0.0
        } else {
            correct as f64 / positives.len() as f64
        },
        correct,
        positives: positives.len(),
    }
}

/// Fraction of positive images with at least one hit among their top `m`
/// ranked boxes. Equals [`corloc`] at `m = 1`.
pub fn corloc_at_m(
    ranked: &BTreeMap<String, Vec<BoundingBox>>,
    dataset: &Dataset,
    class: usize,
    m: usize,
    t: f64,
) -> Result<CorLoc> {
    if m < 1 {
        return Err(Error::Config("M must be at least 1".into()));
    }
    Ok(corloc_hits(ranked, dataset, class, m, t))
}

/// Fraction of ground-truth boxes of `class` (on positive images) matched by
/// one of the top `m` boxes, under greedy one-to-one matching by IoU.
pub fn recall_at_m(
    ranked: &BTreeMap<String, Vec<BoundingBox>>,
    dataset: &Dataset,
    class: usize,
    m: usize,
    t: f64,
) -> Result<f64> {
    if m < 1 {
        return Err(Error::Config("M must be at least 1".into()));
    }
    let mut total = 0usize;
    let mut matched = 0usize;
    for img in &dataset.images {
        let gts: Vec<&BoundingBox> = img.gt_of(class).collect();
        total += gts.len();
        let Some(boxes) = ranked.get(&img.id) else { continue };
        let boxes = &boxes[..m.min(boxes.len())];
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (gi, g) in gts.iter().enumerate() {
            for (bi, b) in boxes.iter().enumerate() {
                let o = g.iou(b);
                if o >= t {
                    pairs.push((o, gi, bi));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut gt_used = vec![false; gts.len()];
        let mut box_used = vec![false; boxes.len()];
        for (_, gi, bi) in pairs {
            if !gt_used[gi] && !box_used[bi] {
                gt_used[gi] = true;
                box_used[bi] = true;
                matched += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { matched as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GtBox, LabeledImage};
    use crate::image::Image;

    fn b(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn img(id: &str, labels: Vec<u8>, gt: Vec<GtBox>) -> LabeledImage {
        LabeledImage {
            id: id.into(),
            image: Image::filled(32, 32, [0.5; 3]),
            labels,
            gt,
        }
    }

    fn ds() -> Dataset {
        Dataset {
            num_classes: 2,
            images: vec![
                img("a", vec![1, 0], vec![GtBox { class: 0, bbox: b(0, 0, 10, 10) }]),
                img("b", vec![1, 0], vec![GtBox { class: 0, bbox: b(10, 10, 20, 20) }]),
                img(
                    "c",
                    vec![1, 1],
                    vec![
                        GtBox { class: 0, bbox: b(0, 0, 8, 8) },
                        GtBox { class: 0, bbox: b(20, 20, 30, 30) },
                        GtBox { class: 1, bbox: b(10, 0, 20, 8) },
                    ],
                ),
                img("d", vec![0, 0], vec![]),
            ],
        }
    }

    #[test]
    fn corloc_counts() {
        let d = ds();
        let mut locs = BTreeMap::new();
        locs.insert("a".to_string(), b(0, 0, 10, 10));
        locs.insert("b".to_string(), b(0, 0, 5, 5));
        locs.insert("c".to_string(), b(20, 20, 30, 30));
        locs.insert("d".to_string(), b(0, 0, 5, 5));
        let r = corloc(&locs, &d, 0, 0.5);
        assert_eq!((r.correct, r.positives), (2, 3));
        assert!((r.value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn corloc_threshold_inclusive() {
        let d = ds();
        let mut locs = BTreeMap::new();
        // [0,0,10,10] vs [0,0,10,5]: IoU exactly 0.5
        locs.insert("a".to_string(), b(0, 0, 10, 5));
        assert_eq!(b(0, 0, 10, 10).iou(&b(0, 0, 10, 5)), 0.5);
        assert_eq!(corloc(&locs, &d, 0, 0.5).correct, 1);
    }

    #[test]
    fn recall_one_to_one() {
        let d = ds();
        let mut ranked = BTreeMap::new();
        // one box hits both class-0 gts of `c`? No: it can match only one.
        ranked.insert("c".to_string(), vec![b(0, 0, 8, 8), b(0, 0, 8, 8), b(20, 20, 30, 30)]);
        let r = recall_at_m(&ranked, &d, 0, 2, 0.5).unwrap();
        assert!((r - 1.0 / 4.0).abs() < 1e-15);
        let r3 = recall_at_m(&ranked, &d, 0, 3, 0.5).unwrap();
        assert!((r3 - 2.0 / 4.0).abs() < 1e-15);
        assert!(recall_at_m(&ranked, &d, 0, 0, 0.5).is_err());
    }
}
