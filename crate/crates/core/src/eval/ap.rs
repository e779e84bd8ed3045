use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::detector::Detection;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMethod {
    /// Area under the precision envelope at every recall change.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub class: usize,
    pub ap: f64,
    pub num_gt: usize,
    /// Per ranked detection.
    pub scores: Vec<f64>,
    pub tp: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Detections of `class` in descending score order (stable for ties), each
/// marked true/false positive by greedy matching against unclaimed ground
/// truth in the same image.
pub(crate) fn match_detections(
    detections: &[Detection],
    dataset: &Dataset,
    class: usize,
    iou_threshold: f64,
) -> Vec<(usize, bool, f64)> {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].class == class)
        .collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut claimed: std::collections::HashMap<(&str, usize), bool> = Default::default();
    order
        .into_iter()
        .map(|i| {
            let d = &detections[i];
            let mut best = (0.0, None);
            if let Some(img) = dataset.get(&d.image_id) {
                for (gi, g) in img.gt.iter().enumerate() {
                    if g.class != class {
                        continue;
                    }
                    let o = g.bbox.iou(&d.bbox);
                    if o > best.0 {
                        best = (o, Some(gi));
                    }
                }
            }
            let tp = match best {
                (o, Some(gi)) if o >= iou_threshold => {
                    let slot = claimed.entry((d.image_id.as_str(), gi)).or_insert(false);
                    let fresh = !*slot;
                    *slot = true;
                    fresh
                }
                _ => false,
            };
            (i, tp, best.0)
        })
        .collect()
}

/// Average precision for one class; `None` when the class has no ground
/// truth.
pub fn average_precision(
    detections: &[Detection],
    dataset: &Dataset,
    class: usize,
    iou_threshold: f64,
    method: ApMethod,
) -> Option<PrCurve> {
    let num_gt: usize = dataset.images.iter().map(|i| i.gt_of(class).count()).sum();
    if num_gt == 0 {
        warn!("class {class} has no ground truth; AP undefined");
        return None;
    }
    let matched = match_detections(detections, dataset, class, iou_threshold);
    let mut tp_cum = 0usize;
    let mut curve = PrCurve {
        class,
        ap: 0.0,
        num_gt,
        scores: Vec::with_capacity(matched.len()),
        tp: Vec::with_capacity(matched.len()),
        precision: Vec::with_capacity(matched.len()),
        recall: Vec::with_capacity(matched.len()),
    };
    for (rank, (i, tp, _)) in matched.iter().enumerate() {
        tp_cum += usize::from(*tp);
        curve.scores.push(detections[*i].score);
        curve.tp.push(*tp);
        curve.precision.push(tp_cum as f64 / (rank + 1) as f64);
        curve.recall.push(tp_cum as f64 / num_gt as f64);
    }
    curve.ap = area(&curve.precision, &curve.recall, method);
    Some(curve)
}

fn area(precision: &[f64], recall: &[f64], method: ApMethod) -> f64 {
    match method {
        ApMethod::AllPoints => {
            let mut mrec = Vec::with_capacity(recall.len() + 2);
            mrec.push(0.0);
            mrec.extend_from_slice(recall);
            mrec.push(1.0);
            let mut mpre = Vec::with_capacity(precision.len() + 2);
            mpre.push(0.0);
            mpre.extend_from_slice(precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r = k as f64 / 10.0;
                    precision
                        .iter()
                        .zip(recall)
                        .filter(|(_, &rc)| rc >= r)
                        .map(|(&p, _)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

/// Unweighted mean over classes with a defined AP.
pub fn mean_ap(curves: &[Option<PrCurve>]) -> Option<f64> {
    let defined: Vec<f64> = curves.iter().flatten().map(|c| c.ap).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn save_pr_curves(curves: &[Option<PrCurve>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "class,rank,score,tp,precision,recall")?;
    for c in curves.iter().flatten() {
        for i in 0..c.scores.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.class,
                i + 1,
                c.scores[i],
                u8::from(c.tp[i]),
                c.precision[i],
                c.recall[i]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
