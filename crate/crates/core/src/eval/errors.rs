use serde::{Deserialize, Serialize};

use super::ap::match_detections;
use super::EvalConfig;
use crate::dataset::Dataset;
use crate::detector::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// True positive.
    Cor,
    /// Right class, poor overlap (or a duplicate).
    Loc,
    /// Confused with a similar class.
    Sim,
    /// Confused with some other class.
    Oth,
    /// Fired on background.
    BG,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub cor: usize,
    pub loc: usize,
    pub sim: usize,
    pub oth: usize,
    pub bg: usize,
}

impl ErrorBreakdown {
    pub fn total(&self) -> usize {
        self.cor + self.loc + self.sim + self.oth + self.bg
    }

    fn add(&mut self, kind: ErrorKind) {
        match kind {
            ErrorKind::Cor => self.cor += 1,
            ErrorKind::Loc => self.loc += 1,
            ErrorKind::Sim => self.sim += 1,
            ErrorKind::Oth => self.oth += 1,
            ErrorKind::BG => self.bg += 1,
        }
    }
}

/// Categorizes every detection of `class` in score order. Returns the
/// per-detection kinds (in ranked order) and their counts.
pub fn error_analysis(
    detections: &[Detection],
    dataset: &Dataset,
    class: usize,
    cfg: &EvalConfig,
) -> (Vec<ErrorKind>, ErrorBreakdown) {
    let matched = match_detections(detections, dataset, class, cfg.iou_threshold);
    let mut counts = ErrorBreakdown::default();
    let kinds = matched
        .into_iter()
        .map(|(i, tp, same_iou)| {
            let kind = if tp {
                ErrorKind::Cor
            } else if same_iou >= cfg.weak_overlap {
                ErrorKind::Loc
            } else {
                let d = &detections[i];
                let (mut sim, mut oth) = (0.0f64, 0.0f64);
                if let Some(img) = dataset.get(&d.image_id) {
                    for g in img.gt.iter().filter(|g| g.class != class) {
                        let o = g.bbox.iou(&d.bbox);
                        if cfg.similar(class, g.class) {
                            sim = sim.max(o);
                        } else {
                            oth = oth.max(o);
                        }
                    }
                }
                if sim >= cfg.weak_overlap {
                    ErrorKind::Sim
                } else if oth >= cfg.weak_overlap {
                    ErrorKind::Oth
                } else {
                    ErrorKind::BG
                }
            };
            counts.add(kind);
            kind
        })
        .collect();
    (kinds, counts)
}
