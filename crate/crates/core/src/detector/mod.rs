//! Detection head on top of the classification network: ROI features from
//! the last conv layer, a (C+1)-way softmax and per-class box regression.

mod checkpoint;
mod io;
mod train;

pub use checkpoint::{load_detector, save_detector};
pub use io::{load_detections, save_detections};
pub use train::{detector_loss, train_detector, DetectorModel, DetectorTrainConfig, DetectorTrainReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::classifier::{ClassifierModel, FeatureMapStack};
use crate::dataset::{Dataset, Proposal, ProposalSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mil::roi_features;
use crate::refine::RefinedBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub class: usize,
    pub score: f64,
}

/// `0.5 x^2` inside `|x| < 1`, `|x| - 0.5` outside.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

fn geometry(b: &BoundingBox) -> (f64, f64, f64, f64) {
    let w = b.width() as f64;
    let h = b.height() as f64;
    (b.x1 as f64 + 0.5 * w, b.y1 as f64 + 0.5 * h, w, h)
}

/// Offsets taking `proposal` onto `target`: centre shifts in proposal units
/// and log size ratios.
pub fn encode(proposal: &BoundingBox, target: &BoundingBox) -> [f64; 4] {
    let (px, py, pw, ph) = geometry(proposal);
    let (tx, ty, tw, th) = geometry(target);
    [(tx - px) / pw, (ty - py) / ph, (tw / pw).ln(), (th / ph).ln()]
}

/// Inverse of [`encode`] in continuous coordinates `(x1, y1, x2, y2)`.
pub fn decode(proposal: &BoundingBox, t: &[f64; 4]) -> [f64; 4] {
    let (px, py, pw, ph) = geometry(proposal);
    let cx = px + t[0] * pw;
    let cy = py + t[1] * ph;
    // keep exp finite for wild predictions
    let w = pw * t[2].clamp(-10.0, 10.0).exp();
    let h = ph * t[3].clamp(-10.0, 10.0).exp();
    [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
}

/// Rounds a decoded box to pixels and clips it to the image; falls back to
/// `proposal` if nothing is left.
pub fn decode_clipped(proposal: &BoundingBox, t: &[f64; 4], width: u32, height: u32) -> BoundingBox {
    let [x1, y1, x2, y2] = decode(proposal, t);
    BoundingBox::clipped(
        x1.round() as i64,
        y1.round() as i64,
        x2.round() as i64,
        y2.round() as i64,
        width,
        height,
    )
    .unwrap_or(*proposal)
}

/// Greedy suppression: visit boxes by descending score (ties in input
/// order) and keep one unless it overlaps an already kept box by at least
/// `iou`. Returns kept indices in visiting order.
pub fn nms(boxes: &[BoundingBox], scores: &[f64], iou: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| boxes[k].iou(&boxes[i]) < iou) {
            keep.push(i);
        }
    }
    keep
}

/// Training ROI: `label` 0 is background, `c + 1` is class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSample {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub label: usize,
    /// Regression target, foreground only.
    pub target: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiBands {
    /// Minimum overlap with a mined box for a foreground sample.
    pub foreground: f64,
    /// Lower edge of the background band `[background, foreground)`.
    pub background: f64,
}

impl Default for RoiBands {
    fn default() -> Self {
        RoiBands {
            foreground: 0.5,
            background: 0.1,
        }
    }
}

/// Which band a maximum overlap falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Foreground,
    Background,
    Discarded,
}

impl RoiBands {
    pub fn band(&self, max_iou: f64) -> Band {
        if max_iou >= self.foreground {
            Band::Foreground
        } else if max_iou >= self.background {
            Band::Background
        } else {
            Band::Discarded
        }
    }
}

/// Labels every proposal against the mined boxes of its image. Mined boxes
/// are added as foreground samples of their own. Images without mined boxes
/// contribute nothing. Samples are grouped by image id in sorted order.
pub fn build_roi_set(proposals: &ProposalSet, mined: &[RefinedBox], bands: RoiBands) -> Vec<RoiSample> {
    let mut by_image: std::collections::BTreeMap<&str, Vec<&RefinedBox>> = Default::default();
    for m in mined {
        by_image.entry(m.image_id.as_str()).or_default().push(m);
    }
    let mut out = Vec::new();
    for (id, boxes) in &by_image {
        for m in boxes {
            out.push(RoiSample {
                image_id: id.to_string(),
                bbox: m.bbox,
                label: m.class + 1,
                target: Some([0.0; 4]),
            });
        }
        let Some(props) = proposals.get(*id) else { continue };
        for p in props {
            let mut best: Option<(f64, &RefinedBox)> = None;
            for m in boxes {
                let o = m.bbox.iou(&p.bbox);
                if best.map_or(true, |(v, _)| o > v) {
                    best = Some((o, m));
                }
            }
            let Some((o, m)) = best else { continue };
            match bands.band(o) {
                Band::Foreground => out.push(RoiSample {
                    image_id: id.to_string(),
                    bbox: p.bbox,
                    label: m.class + 1,
                    target: Some(encode(&p.bbox, &m.bbox)),
                }),
                Band::Background => out.push(RoiSample {
                    image_id: id.to_string(),
                    bbox: p.bbox,
                    label: 0,
                    target: None,
                }),
                Band::Discarded => {}
            }
        }
    }
    out
}

/// ROI features of every sample, computing each image's maps once.
pub fn sample_features(backbone: &ClassifierModel, dataset: &Dataset, samples: &[RoiSample]) -> Result<Vec<Vec<f64>>> {
    let mut ids: Vec<&str> = samples.iter().map(|s| s.image_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let maps: std::collections::BTreeMap<&str, (FeatureMapStack, u32, u32)> = ids
        .par_iter()
        .map(|id| {
            let img = dataset
                .get(id)
                .ok_or_else(|| Error::Config(format!("ROI sample for unknown image {id}")))?;
            Ok((*id, (backbone.feature_maps(&img.image)?, img.image.width(), img.image.height())))
        })
        .collect::<Result<_>>()?;
    Ok(samples
        .iter()
        .map(|s| {
            let (m, w, h) = &maps[s.image_id.as_str()];
            roi_features(m, *w, *h, &s.bbox)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            score_threshold: 0.8,
            nms_iou: 0.5,
        }
    }
}

/// Scores, regresses and suppresses the proposals of one image. Output is
/// sorted by descending score.
pub fn detect(
    head: &DetectorModel,
    backbone: &ClassifierModel,
    image_id: &str,
    image: &Image,
    proposals: &[Proposal],
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let maps = backbone.feature_maps(image)?;
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::new();
    let mut per_class: Vec<(Vec<BoundingBox>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); head.num_classes];
    for p in proposals {
        let f = roi_features(&maps, w, h, &p.bbox);
        let probs = head.probabilities(&f)?;
        for (c, slot) in per_class.iter_mut().enumerate() {
            let s = probs[c + 1];
            if s >= cfg.score_threshold {
                slot.0.push(decode_clipped(&p.bbox, &head.regress(&f, c), w, h));
                slot.1.push(s);
            }
        }
    }
    for (c, (boxes, scores)) in per_class.into_iter().enumerate() {
        for i in nms(&boxes, &scores, cfg.nms_iou) {
            out.push(Detection {
                image_id: image_id.to_string(),
                bbox: boxes[i],
                class: c,
                score: scores[i],
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)));
    Ok(out)
}

/// [`detect`] over every image with proposals, in dataset order.
pub fn detect_dataset(
    head: &DetectorModel,
    backbone: &ClassifierModel,
    dataset: &Dataset,
    proposals: &ProposalSet,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let per_image: Vec<Vec<Detection>> = dataset
        .images
        .par_iter()
        .map(|img| {
            let props = proposals.get(&img.id).map(Vec::as_slice).unwrap_or_default();
            detect(head, backbone, &img.id, &img.image, props, cfg)
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Best regressed box and its score for every class of one image, with no
/// threshold or suppression. Used to measure CorLoc of a detector.
pub fn localize(
    head: &DetectorModel,
    backbone: &ClassifierModel,
    image: &Image,
    proposals: &[Proposal],
) -> Result<Vec<Option<(BoundingBox, f64)>>> {
    let mut best: Vec<Option<(BoundingBox, f64)>> = vec![None; head.num_classes];
    if proposals.is_empty() {
        return Ok(best);
    }
    let maps = backbone.feature_maps(image)?;
    let (w, h) = (image.width(), image.height());
    for p in proposals {
        let f = roi_features(&maps, w, h, &p.bbox);
        let probs = head.probabilities(&f)?;
        for (c, slot) in best.iter_mut().enumerate() {
            let s = probs[c + 1];
            if slot.map_or(true, |(_, top)| s > top) {
                *slot = Some((decode_clipped(&p.bbox, &head.regress(&f, c), w, h), s));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn smooth_l1_pieces() {
        assert_eq!(smooth_l1(0.0), (0.0, 0.0));
        assert_eq!(smooth_l1(1.0), (0.5, 1.0));
        assert_eq!(smooth_l1(-3.0), (2.5, -1.0));
        assert_eq!(smooth_l1(0.5), (0.125, 0.5));
    }

    #[test]
    fn encode_decode_round_trip() {
        let p = b(10, 12, 30, 40);
        let t = b(8, 15, 35, 33);
        let d = decode(&p, &encode(&p, &t));
        for (a, e) in d.iter().zip([8.0, 15.0, 35.0, 33.0]) {
            assert!((a - e).abs() < 1e-9);
        }
        assert_eq!(encode(&p, &p), [0.0; 4]);
        assert_eq!(decode_clipped(&p, &encode(&p, &t), 64, 64), t);
    }

    #[test]
    fn nms_examples() {
        // overlap 60 / union 100
        let a = b(0, 0, 10, 10);
        let c = b(0, 0, 10, 6);
        assert!((a.iou(&c) - 0.6).abs() < 1e-12);
        assert_eq!(nms(&[a, c], &[0.9, 0.85], 0.5), vec![0]);
        assert_eq!(nms(&[a, c], &[0.85, 0.9], 0.5), vec![1]);
        assert_eq!(nms(&[a, b(20, 20, 30, 30)], &[0.5, 0.7], 0.5), vec![1, 0]);
    }

    #[test]
    fn bands_partition() {
        let bands = RoiBands::default();
        assert_eq!(bands.band(0.5), Band::Foreground);
        assert_eq!(bands.band(0.3), Band::Background);
        assert_eq!(bands.band(0.1), Band::Background);
        assert_eq!(bands.band(0.05), Band::Discarded);
    }

    #[test]
    fn roi_labels() {
        let mined = vec![RefinedBox {
            class: 1,
            image_id: "a".into(),
            bbox: b(0, 0, 10, 10),
            source: b(0, 0, 10, 10),
            score: 1.0,
            fallback: false,
        }];
        let mut props = ProposalSet::new();
        props.insert(
            "a".into(),
            vec![
                Proposal { bbox: b(0, 0, 10, 10), objectness: 0.0 },
                Proposal { bbox: b(0, 0, 10, 3), objectness: 0.0 },  // IoU 0.3
                Proposal { bbox: b(9, 9, 20, 20), objectness: 0.0 }, // IoU < 0.1
            ],
        );
        let s = build_roi_set(&props, &mined, RoiBands::default());
        assert_eq!(s.len(), 3);
        assert_eq!((s[1].label, s[1].target), (2, Some([0.0; 4])));
        assert_eq!((s[2].label, s[2].target), (0, None));
    }
}
