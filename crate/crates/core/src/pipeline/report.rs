//! Consolidated evaluation, the ablation table and the mask-out strategy
//! comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::stages::{first_per_image, refine_selected, run_mil, top_mined};
use crate::bbox::BoundingBox;
use crate::classifier::ClassifierModel;
use crate::dataset::{mean_pixel, Dataset, ProposalSet};
use crate::detector::{build_roi_set, detect_dataset, localize, sample_features, train_detector, Detection};
use crate::error::Result;
use crate::eval::{
    average_precision, corloc, corloc_at_m, error_analysis, mean_ap, recall_at_m, CorLoc, ErrorBreakdown, PrCurve,
};
use crate::mil::SelectedInstance;
use crate::mining::{mine, rank_class, score_dataset, ImageScores, MaskOutStrategy, MinedSet, MiningConfig};
use crate::refine::RefinedBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtM {
    pub m: usize,
    pub corloc: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class: usize,
    /// CorLoc of the final (refined) training localizations.
    pub corloc: CorLoc,
    /// CorLoc@M and recall@M of the mined proposal lists.
    pub mined: Vec<AtM>,
    /// Test-set AP; absent when the class has no test ground truth.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub errors: ErrorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassEval>,
    pub mean_corloc: f64,
    pub map: Option<f64>,
    pub detections: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Ranked mined boxes of the positive images of `class`.
fn ranked_positives(ds: &Dataset, mined: &MinedSet, class: usize) -> BTreeMap<String, Vec<BoundingBox>> {
    ds.images
        .iter()
        .filter(|i| i.has_class(class))
        .filter_map(|i| {
            let list = mined.get(&(i.id.clone(), class))?;
            Some((i.id.clone(), list.iter().map(|p| p.bbox).collect()))
        })
        .collect()
}

/// Localizations keyed by image, restricted to positives of `class`.
fn positives_only(ds: &Dataset, locs: BTreeMap<String, BoundingBox>, class: usize) -> BTreeMap<String, BoundingBox> {
    locs.into_iter()
        .filter(|(id, _)| ds.get(id).is_some_and(|i| i.has_class(class)))
        .collect()
}

pub fn evaluate(
    cfg: &PipelineConfig,
    train: &Dataset,
    test: &Dataset,
    refined: &[RefinedBox],
    mined: &MinedSet,
    dets: &[Detection],
) -> Result<(EvalReport, Vec<Option<PrCurve>>)> {
    let e = &cfg.eval;
    let curves: Vec<Option<PrCurve>> = (0..test.num_classes)
        .map(|c| average_precision(dets, test, c, e.iou_threshold, e.ap_method))
        .collect();
    let mut classes = Vec::new();
    for class in 0..train.num_classes {
        let locs = first_per_image(refined.iter().map(|r| (r.class, r.image_id.as_str(), r.bbox)), class);
        let ranked = ranked_positives(train, mined, class);
        let mut at = Vec::new();
        for &m in &cfg.report.corloc_m {
            at.push(AtM {
                m,
                corloc: corloc_at_m(&ranked, train, class, m, e.mining_overlap)?.value,
                recall: recall_at_m(&ranked, train, class, m, e.mining_overlap)?,
            });
        }
        let curve = curves.get(class).and_then(Option::as_ref);
        classes.push(ClassEval {
            class,
            corloc: corloc(&positives_only(train, locs, class), train, class, e.iou_threshold),
            mined: at,
            ap: curve.map(|c| c.ap),
            num_gt: curve.map_or(0, |c| c.num_gt),
            errors: error_analysis(dets, test, class, e).1,
        });
    }
    let report = EvalReport {
        mean_corloc: mean(&classes.iter().map(|c| c.corloc.value).collect::<Vec<_>>()),
        map: mean_ap(&curves),
        detections: dets.len(),
        classes,
    };
    Ok((report, curves))
}

/// One row of the ablation table: which components were on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub contrast: bool,
    pub activation: bool,
    pub mil: bool,
    pub seg: bool,
    pub ft: bool,
}

impl Variant {
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.contrast {
            parts.push("CS");
        }
        if self.activation {
            parts.push("AS");
        }
        if self.mil {
            parts.push("MIL");
        }
        if self.seg {
            parts.push("Seg");
        }
        if self.ft {
            parts.push("FT");
        }
        parts.join("+")
    }

    pub fn parse(name: &str) -> Option<Variant> {
        let mut v = Variant {
            contrast: false,
            activation: false,
            mil: false,
            seg: false,
            ft: false,
        };
        for p in name.split('+') {
            let slot = match p.trim() {
                "CS" => &mut v.contrast,
                "AS" => &mut v.activation,
                "MIL" => &mut v.mil,
                "Seg" => &mut v.seg,
                "FT" => &mut v.ft,
                _ => return None,
            };
            *slot = true;
        }
        (v.contrast || v.activation).then_some(v)
    }
}

/// Mining-only rows, then MIL and refinement, then detector fine-tuning.
pub fn default_variants(with_ft: bool) -> Vec<Variant> {
    let mut names = vec![
        "CS",
        "AS",
        "CS+AS",
        "CS+MIL",
        "CS+AS+MIL",
        "CS+MIL+Seg",
        "CS+AS+MIL+Seg",
    ];
    if with_ft {
        names.extend(["CS+MIL+FT", "CS+AS+MIL+FT", "CS+AS+MIL+Seg+FT"]);
    }
    names.into_iter().map(|n| Variant::parse(n).expect("valid name")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Training-set CorLoc per class.
    pub corloc: Vec<f64>,
    pub mean_corloc: f64,
    /// Test-set AP per class; FT rows only.
    pub ap: Vec<Option<f64>>,
    pub map: Option<f64>,
}

pub struct AblationData<'a> {
    pub cfg: &'a PipelineConfig,
    pub model: &'a ClassifierModel,
    pub train: &'a Dataset,
    pub train_props: &'a ProposalSet,
    pub test: &'a Dataset,
    pub test_props: &'a ProposalSet,
    /// Raw proposal scores of the training set.
    pub scores: &'a [ImageScores],
}

struct Chain {
    /// Top-1 (without MIL) or MIL selections, grouped by class.
    selected: Vec<SelectedInstance>,
    refined: Option<Vec<RefinedBox>>,
}

fn as_refined(sel: &[SelectedInstance]) -> Vec<RefinedBox> {
    sel.iter()
        .map(|s| RefinedBox {
            class: s.class,
            image_id: s.image_id.clone(),
            bbox: s.bbox,
            source: s.bbox,
            score: s.score,
            fallback: false,
        })
        .collect()
}

/// Recomputes every requested ablation row from the stored raw scores.
/// Rows needing a channel that was not scored are skipped with a warning.
pub fn ablation(data: &AblationData, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    let cfg = data.cfg;
    let nc = data.train.num_classes;
    let contrast_scored = cfg.mining.use_contrast;
    let mut mined_cache: BTreeMap<(bool, bool), MinedSet> = BTreeMap::new();
    let mut chain_cache: BTreeMap<(bool, bool, bool, bool), Chain> = BTreeMap::new();
    let mut rows = Vec::new();
    for v in variants {
        if v.contrast && !contrast_scored {
            warn!("ablation row {} skipped: contrast scores were not computed", v.name());
            continue;
        }
        let key = (v.contrast, v.activation);
        if !mined_cache.contains_key(&key) {
            let mcfg = MiningConfig {
                use_contrast: v.contrast,
                use_activation: v.activation,
                ..cfg.mining.clone()
            };
            mined_cache.insert(key, mine(data.scores, &mcfg)?);
        }
        let mined = &mined_cache[&key];
        let ckey = (v.contrast, v.activation, v.mil, v.seg);
        if !chain_cache.contains_key(&ckey) {
            let selected = if v.mil {
                // reuse the MIL run of the same mining variant when present
                match chain_cache.get(&(v.contrast, v.activation, true, !v.seg)) {
                    Some(c) => c.selected.clone(),
                    None => run_mil(data.model, data.train, mined, &cfg.mil)?.selected,
                }
            } else {
                top_mined(data.train, mined)
            };
            let refined = if v.seg {
                Some(
                    refine_selected(data.train, &selected, &cfg.refine, true)?
                        .into_iter()
                        .map(|(r, _)| r)
                        .collect(),
                )
            } else {
                None
            };
            chain_cache.insert(ckey, Chain { selected, refined });
        }
        let chain = &chain_cache[&ckey];
        let boxes = chain.refined.clone().unwrap_or_else(|| as_refined(&chain.selected));
        info!("ablation row {}", v.name());
        let row = if v.ft {
            ft_row(data, v, &boxes)?
        } else {
            let corlocs: Vec<f64> = (0..nc)
                .map(|c| {
                    let locs = first_per_image(boxes.iter().map(|r| (r.class, r.image_id.as_str(), r.bbox)), c);
                    corloc(&positives_only(data.train, locs, c), data.train, c, cfg.eval.iou_threshold).value
                })
                .collect();
            AblationRow {
                variant: v.name(),
                mean_corloc: mean(&corlocs),
                corloc: corlocs,
                ap: vec![None; nc],
                map: None,
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Trains a detector on `boxes`; CorLoc is measured with its best-scoring
/// box on each positive training image, AP on the test split.
fn ft_row(data: &AblationData, v: &Variant, boxes: &[RefinedBox]) -> Result<AblationRow> {
    let cfg = data.cfg;
    let nc = data.train.num_classes;
    let rois = build_roi_set(data.train_props, boxes, cfg.bands);
    let feats = sample_features(data.model, data.train, &rois)?;
    let (head, _) = train_detector(&rois, &feats, nc, &cfg.detector)?;
    let best: Vec<Vec<Option<(BoundingBox, f64)>>> = data
        .train
        .images
        .par_iter()
        .map(|img| {
            let props = data.train_props.get(&img.id).map(Vec::as_slice).unwrap_or_default();
            localize(&head, data.model, &img.image, props)
        })
        .collect::<Result<_>>()?;
    let corlocs: Vec<f64> = (0..nc)
        .map(|c| {
            let locs: BTreeMap<String, BoundingBox> = data
                .train
                .images
                .iter()
                .zip(&best)
                .filter(|(img, _)| img.has_class(c))
                .filter_map(|(img, b)| b[c].map(|(bb, _)| (img.id.clone(), bb)))
                .collect();
            corloc(&locs, data.train, c, cfg.eval.iou_threshold).value
        })
        .collect();
    let dets = detect_dataset(&head, data.model, data.test, data.test_props, &cfg.detect)?;
    let curves: Vec<Option<PrCurve>> = (0..nc)
        .map(|c| average_precision(&dets, data.test, c, cfg.eval.iou_threshold, cfg.eval.ap_method))
        .collect();
    Ok(AblationRow {
        variant: v.name(),
        mean_corloc: mean(&corlocs),
        corloc: corlocs,
        ap: curves.iter().map(|c| c.as_ref().map(|c| c.ap)).collect(),
        map: mean_ap(&curves),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAtM {
    pub m: usize,
    pub corloc: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: MaskOutStrategy,
    pub at: Vec<StrategyAtM>,
}

/// CorLoc@M of the fused ranking under each mask-out strategy. `reuse`
/// supplies already computed scores for one strategy.
pub fn compare_strategies(
    model: &ClassifierModel,
    ds: &Dataset,
    props: &ProposalSet,
    mining: &MiningConfig,
    ms: &[usize],
    overlap: f64,
    reuse: Option<(MaskOutStrategy, &[ImageScores])>,
) -> Result<Vec<StrategyRow>> {
    let mean_px = mean_pixel(ds)?;
    let mut rows = Vec::new();
    for strategy in MaskOutStrategy::ALL {
        let mcfg = MiningConfig {
            strategy,
            use_contrast: true,
            ..mining.clone()
        };
        let computed;
        let scores: &[ImageScores] = match reuse {
            Some((s, sc)) if s == strategy && mining.use_contrast => sc,
            _ => {
                info!("scoring the training set with mask-out strategy {strategy}");
                computed = score_dataset(model, ds, props, mean_px, &mcfg)?;
                &computed
            }
        };
        let mut at: Vec<StrategyAtM> = ms
            .iter()
            .map(|&m| StrategyAtM {
                m,
                corloc: Vec::new(),
                mean: 0.0,
            })
            .collect();
        for class in 0..ds.num_classes {
            let mut ranked = BTreeMap::new();
            for s in scores {
                if ds.get(&s.image_id).is_some_and(|i| i.has_class(class)) && !s.boxes.is_empty() {
                    let r = rank_class(s, class, &mcfg)?;
                    ranked.insert(s.image_id.clone(), r.iter().map(|p| p.bbox).collect::<Vec<_>>());
                }
            }
            for row in at.iter_mut() {
                row.corloc.push(corloc_at_m(&ranked, ds, class, row.m, overlap)?.value);
            }
        }
        for row in at.iter_mut() {
            row.mean = mean(&row.corloc);
        }
        rows.push(StrategyRow { strategy, at });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub eval: EvalReport,
    pub ablation: Vec<AblationRow>,
    pub strategies: Vec<StrategyRow>,
}

#[allow(clippy::too_many_arguments)]
pub fn build_report(
    cfg: &PipelineConfig,
    eval: EvalReport,
    model: &ClassifierModel,
    train: &Dataset,
    train_props: &ProposalSet,
    test: &Dataset,
    test_props: &ProposalSet,
    scores: &[ImageScores],
) -> Result<Report> {
    let data = AblationData {
        cfg,
        model,
        train,
        train_props,
        test,
        test_props,
        scores,
    };
    let ablation = if cfg.report.ablation {
        self::ablation(&data, &default_variants(cfg.report.ft_rows))?
    } else {
        Vec::new()
    };
    let strategies = if cfg.report.strategies {
        compare_strategies(
            model,
            train,
            train_props,
            &cfg.mining,
            &cfg.report.corloc_m,
            cfg.eval.mining_overlap,
            Some((cfg.mining.strategy, scores)),
        )?
    } else {
        Vec::new()
    };
    Ok(Report {
        eval,
        ablation,
        strategies,
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Markdown rendering of the ablation and strategy tables.
pub fn render_tables(report: &Report) -> String {
    let mut s = String::new();
    let nc = report.eval.classes.len();
    if !report.ablation.is_empty() {
        let _ = write!(s, "| variant |");
        for c in 0..nc {
            let _ = write!(s, " CorLoc c{c} |");
        }
        let _ = writeln!(s, " mean CorLoc | mAP |");
        let _ = writeln!(s, "|---{}|---|---|", "|---".repeat(nc));
        for r in &report.ablation {
            let _ = write!(s, "| {} |", r.variant);
            for v in &r.corloc {
                let _ = write!(s, " {} |", pct(*v));
            }
            let map = r.map.map_or("-".into(), pct);
            let _ = writeln!(s, " {} | {} |", pct(r.mean_corloc), map);
        }
    }
    if !report.strategies.is_empty() {
        let ms: Vec<usize> = report.strategies[0].at.iter().map(|a| a.m).collect();
        let _ = write!(s, "\n| mask-out |");
        for m in &ms {
            let _ = write!(s, " CorLoc@{m} |");
        }
        let _ = writeln!(s, "\n|---{}|", "|---".repeat(ms.len()));
        for r in &report.strategies {
            let _ = write!(s, "| {} |", r.strategy);
            for a in &r.at {
                let _ = write!(s, " {} |", pct(a.mean));
            }
            let _ = writeln!(s);
        }
    }
    s
}

/// Writes `report.json`, `ablation.csv` and `report.md`; returns their paths.
pub fn write_report(report: &Report, workdir: &Path) -> Result<Vec<PathBuf>> {
    let json_path = workdir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(report)? + "\n")?;
    let csv_path = workdir.join("ablation.csv");
    let nc = report.eval.classes.len();
    let mut csv = String::from("variant");
    for c in 0..nc {
        let _ = write!(csv, ",corloc_c{c}");
    }
    csv.push_str(",mean_corloc");
    for c in 0..nc {
        let _ = write!(csv, ",ap_c{c}");
    }
    csv.push_str(",map\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &report.ablation {
        csv.push_str(&r.variant);
        for v in &r.corloc {
            let _ = write!(csv, ",{v}");
        }
        let _ = write!(csv, ",{}", r.mean_corloc);
        for v in &r.ap {
            let _ = write!(csv, ",{}", opt(*v));
        }
        let _ = writeln!(csv, ",{}", opt(r.map));
    }
    fs::write(&csv_path, csv)?;
    let md_path = workdir.join("report.md");
    fs::write(&md_path, render_tables(report))?;
    Ok(vec![json_path, csv_path, md_path])
}
