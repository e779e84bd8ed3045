use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::manifest::{display_path, hash_path, StageManifest};
use super::report::{build_report, evaluate, write_report, EvalReport};
use crate::classifier::{load_checkpoint, save_checkpoint, train_classifier, ClassifierModel};
use crate::dataset::{
    generate_proposal_set, generate_synthetic, load_manifest, load_proposals, mean_pixel, save_manifest,
    save_proposals, Dataset, ProposalSet,
};
use crate::detector::{
    build_roi_set, detect_dataset, load_detections, load_detector, sample_features, save_detections, save_detector,
    train_detector,
};
use crate::error::{Error, Result};
use crate::mil::{
    bags_from_cache, feature_cache, load_selected, mil_train, save_selected, select_instances, MilClassifier,
    MilConfig, SelectedInstance,
};
use crate::mining::{load_mined, mine, save_mined, save_pool, score_dataset, MinedSet};
use crate::refine::{load_refined, refine_box, save_refined, RefineConfig, RefinedBox, SegmentMask, TwoMeans};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    TrainCls,
    Mine,
    Mil,
    Refine,
    TrainDet,
    Detect,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::GenData,
        Stage::TrainCls,
        Stage::Mine,
        Stage::Mil,
        Stage::Refine,
        Stage::TrainDet,
        Stage::Detect,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainCls => "train-cls",
            Stage::Mine => "mine",
            Stage::Mil => "mil",
            Stage::Refine => "refine",
            Stage::TrainDet => "train-det",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }

    /// The config sections this stage reads, with seeds already derived.
    fn section(self, cfg: &PipelineConfig) -> serde_json::Value {
        match self {
            Stage::GenData => json!({
                "seed": cfg.seed,
                "data": cfg.data,
                "test_data": cfg.test_synthetic(),
                "proposals": cfg.proposals,
                "external": {
                    "train": cfg.paths.train.is_some(),
                    "test": cfg.paths.test.is_some(),
                    "proposals": cfg.paths.proposals.is_some(),
                    "test_proposals": cfg.paths.test_proposals.is_some(),
                },
            }),
            Stage::TrainCls => json!({ "classifier": cfg.classifier }),
            Stage::Mine => json!({ "mining": cfg.mining }),
            Stage::Mil => json!({ "enabled": cfg.stages.mil, "mil": cfg.mil }),
            Stage::Refine => json!({
                "enabled": cfg.stages.seg,
                "dump_masks": cfg.stages.dump_masks,
                "refine": cfg.refine,
            }),
            Stage::TrainDet => json!({ "detector": cfg.detector, "bands": cfg.bands }),
            Stage::Detect => json!({ "detect": cfg.detect }),
            Stage::Eval => json!({ "eval": cfg.eval }),
            Stage::Report => json!({ "report": cfg.report }),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Hash of every config section from `gen-data` up to and including `stage`.
pub fn config_hash(cfg: &PipelineConfig, stage: Stage) -> String {
    let cfg = cfg.resolved();
    let mut acc = String::new();
    for s in Stage::ALL {
        let h = Sha256::new()
            .chain_update(acc.as_bytes())
            .chain_update(s.section(&cfg).to_string().as_bytes())
            .finalize();
        acc = hex::encode(h);
        if s == stage {
            break;
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Run even when the upstream stage was produced under another config.
    pub force: bool,
}

struct Ctx {
    cfg: PipelineConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    metrics: serde_json::Value,
}

impl Ctx {
    fn key(&self, p: &Path) -> String {
        display_path(self.cfg.workdir(), p)
    }

    /// Records an input file, failing with a hint naming its producer.
    fn input(&mut self, path: &Path, producer: &str) -> Result<PathBuf> {
        if !path.exists() {
            return Err(Error::missing(path, format!("run `wsolkit {producer}` first")));
        }
        let h = hash_path(path)?;
        self.inputs.insert(self.key(path), h);
        Ok(path.to_path_buf())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let h = hash_path(path)?;
        self.outputs.insert(self.key(path), h);
        Ok(())
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.cfg.artifact(name)
    }

    fn train(&mut self) -> Result<Dataset> {
        let p = self.input(&self.cfg.train_manifest(), "gen-data")?;
        Ok(load_manifest(&p)?.0)
    }

    fn test(&mut self) -> Result<Dataset> {
        let p = self.input(&self.cfg.test_manifest(), "gen-data")?;
        Ok(load_manifest(&p)?.0)
    }

    fn proposals(&mut self, ds: &Dataset, test: bool) -> Result<ProposalSet> {
        let p = if test { self.cfg.test_proposals() } else { self.cfg.train_proposals() };
        let p = self.input(&p, "gen-data")?;
        let (set, report) = load_proposals(&p, ds)?;
        if report.dropped_boxes > 0 {
            warn!("{}: dropped {} degenerate proposals", p.display(), report.dropped_boxes);
        }
        Ok(set)
    }

    fn classifier(&mut self) -> Result<ClassifierModel> {
        let p = self.input(&self.artifact("classifier.wscm"), "train-cls")?;
        load_checkpoint(&p)
    }
}

fn check_upstream(cfg: &PipelineConfig, stage: Stage, opts: &RunOptions) -> Result<()> {
    let Some(up) = stage.upstream() else { return Ok(()) };
    let Some(m) = StageManifest::load(cfg.workdir(), up.name())? else {
        warn!("no manifest for upstream stage `{up}`; its artifacts are used as found");
        return Ok(());
    };
    let expected = config_hash(cfg, up);
    if m.config_hash != expected {
        if opts.force {
            warn!("upstream stage `{up}` ran under a different config; continuing because of --force");
        } else {
            return Err(Error::ConfigMismatch {
                stage: up.name().into(),
                expected,
                found: m.config_hash,
            });
        }
    }
    for (path, digest) in &m.outputs {
        let p = cfg.workdir().join(path);
        if p.exists() && hash_path(&p)? != *digest {
            warn!("{} changed since `{up}` wrote it", p.display());
        }
    }
    Ok(())
}

/// Runs one stage and writes its artifacts plus `manifests/<stage>.json`.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, opts: &RunOptions) -> Result<StageManifest> {
    cfg.validate()?;
    check_upstream(cfg, stage, opts)?;
    let resolved = cfg.resolved();
    fs::create_dir_all(resolved.workdir())?;
    let mut ctx = Ctx {
        cfg: resolved,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        metrics: json!({}),
    };
    let start = Instant::now();
    info!("stage {stage}: start");
    match stage {
        Stage::GenData => gen_data(&mut ctx)?,
        Stage::TrainCls => train_cls(&mut ctx)?,
        Stage::Mine => mine_stage(&mut ctx)?,
        Stage::Mil => mil_stage(&mut ctx)?,
        Stage::Refine => refine_stage(&mut ctx)?,
        Stage::TrainDet => train_det(&mut ctx)?,
        Stage::Detect => detect_stage(&mut ctx)?,
        Stage::Eval => eval_stage(&mut ctx)?,
        Stage::Report => report_stage(&mut ctx)?,
    }
    let manifest = StageManifest {
        stage: stage.name().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: ctx.cfg.seed,
        config_hash: config_hash(cfg, stage),
        upstream_config_hash: stage.upstream().map(|u| config_hash(cfg, u)).unwrap_or_default(),
        config: stage.section(&ctx.cfg),
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        metrics: ctx.metrics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    manifest.save(cfg.workdir())?;
    info!("stage {stage}: done in {:.1}s", manifest.wall_time_secs);
    Ok(manifest)
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig, opts: &RunOptions) -> Result<Vec<StageManifest>> {
    Stage::ALL.into_iter().map(|s| run_stage(cfg, s, opts)).collect()
}

fn write_generated(ds: &Dataset, path: &Path, cfg: &PipelineConfig) -> Result<()> {
    let dir = path.parent().expect("manifest has a parent");
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    save_manifest(ds, path, cfg.data.format)
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let mut sizes = BTreeMap::new();
    for (split, external, manifest, synth, props_path, external_props) in [
        (
            "train",
            cfg.paths.train.is_some(),
            cfg.train_manifest(),
            cfg.data.synthetic.clone(),
            cfg.train_proposals(),
            cfg.paths.proposals.is_some(),
        ),
        (
            "test",
            cfg.paths.test.is_some(),
            cfg.test_manifest(),
            cfg.test_synthetic(),
            cfg.test_proposals(),
            cfg.paths.test_proposals.is_some(),
        ),
    ] {
        let ds = if external {
            ctx.input(&manifest, "gen-data")?;
            let (ds, report) = load_manifest(&manifest)?;
            if report.dropped_boxes > 0 {
                warn!("{split}: dropped {} degenerate ground-truth boxes", report.dropped_boxes);
            }
            ds
        } else {
            let ds = generate_synthetic(&synth)?;
            write_generated(&ds, &manifest, &cfg)?;
            ctx.output(manifest.parent().expect("parent"))?;
            // reload so later stages see exactly what is on disk
            load_manifest(&manifest)?.0
        };
        let num_props = if external_props {
            ctx.input(&props_path, "gen-data")?;
            let (set, report) = load_proposals(&props_path, &ds)?;
            if report.dropped_boxes > 0 {
                warn!("{split}: dropped {} degenerate proposals", report.dropped_boxes);
            }
            set.values().map(Vec::len).sum::<usize>()
        } else {
            let set = generate_proposal_set(&ds, &cfg.proposals, cfg.proposal_seed(split));
            save_proposals(&set, &props_path)?;
            ctx.output(&props_path)?;
            set.values().map(Vec::len).sum::<usize>()
        };
        sizes.insert(split, json!({ "images": ds.len(), "classes": ds.num_classes, "proposals": num_props }));
    }
    ctx.metrics = json!(sizes);
    Ok(())
}

fn train_cls(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.train()?;
    let (model, report) = train_classifier(&ds, &ctx.cfg.classifier)?;
    let path = ctx.artifact("classifier.wscm");
    save_checkpoint(&model, &path)?;
    ctx.output(&path)?;
    let curve = ctx.artifact("classifier_loss.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&curve)?);
    writeln!(w, "iteration,loss")?;
    for (i, l) in report.loss_history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    w.flush()?;
    drop(w);
    ctx.output(&curve)?;
    let n = report.loss_history.len();
    let win = n.min(20);
    ctx.metrics = json!({
        "first_loss": report.loss_history.first(),
        "final_window_loss": report.window_mean(n - win, win),
    });
    Ok(())
}

fn mine_stage(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.train()?;
    let props = ctx.proposals(&ds, false)?;
    let model = ctx.classifier()?;
    let scores = score_dataset(&model, &ds, &props, mean_pixel(&ds)?, &ctx.cfg.mining)?;
    let pool = ctx.artifact("pool.csv");
    save_pool(&scores, &pool)?;
    ctx.output(&pool)?;
    let mined = mine(&scores, &ctx.cfg.mining)?;
    let path = ctx.artifact("mined.csv");
    save_mined(&mined, &path)?;
    ctx.output(&path)?;
    ctx.metrics = json!({
        "scored_boxes": scores.iter().map(|s| s.boxes.len()).sum::<usize>(),
        "mined_pairs": mined.len(),
    });
    Ok(())
}

/// The highest-ranked mined proposal of every positive (image, class) pair.
pub fn top_mined(ds: &Dataset, mined: &MinedSet) -> Vec<SelectedInstance> {
    (0..ds.num_classes)
        .flat_map(|class| {
            ds.images.iter().filter(move |img| img.has_class(class)).filter_map(move |img| {
                let top = mined.get(&(img.id.clone(), class))?.first()?;
                Some(SelectedInstance {
                    class,
                    image_id: img.id.clone(),
                    bbox: top.bbox,
                    score: top.fused,
                })
            })
        })
        .collect()
}

pub struct MilOutcome {
    pub classifiers: Vec<MilClassifier>,
    /// Objective trace per trained class.
    pub objectives: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    /// Grouped by class, then bag; each bag's argmax leads its group.
    pub selected: Vec<SelectedInstance>,
}

/// Trains one MIL classifier per class on the mined bags. Classes without
/// positive bags are skipped.
pub fn run_mil(model: &ClassifierModel, ds: &Dataset, mined: &MinedSet, cfg: &MilConfig) -> Result<MilOutcome> {
    let maps = feature_cache(model, ds, mined)?;
    let mut out = MilOutcome {
        classifiers: Vec::new(),
        objectives: Vec::new(),
        converged: Vec::new(),
        selected: Vec::new(),
    };
    for class in 0..ds.num_classes {
        let bags = bags_from_cache(ds, mined, &maps, class)?;
        if !bags.iter().any(|b| b.is_positive()) {
            warn!("class {class}: no positive bags, skipped");
            continue;
        }
        let (clf, _, report) = mil_train(&bags, cfg)?;
        out.selected.extend(select_instances(&clf, &bags, cfg.select_threshold));
        out.objectives.push(report.objectives);
        out.converged.push(report.converged);
        out.classifiers.push(clf);
    }
    Ok(out)
}

/// First entry per (image, class), i.e. the top localization.
pub fn first_per_image<'a, I>(items: I, class: usize) -> BTreeMap<String, crate::BoundingBox>
where
    I: IntoIterator<Item = (usize, &'a str, crate::BoundingBox)>,
{
    let mut out = BTreeMap::new();
    for (c, id, b) in items {
        if c == class {
            out.entry(id.to_string()).or_insert(b);
        }
    }
    out
}

fn mil_stage(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.train()?;
    let mined_path = ctx.input(&ctx.artifact("mined.csv"), "mine")?;
    let mined = load_mined(&mined_path)?;
    let selected = if ctx.cfg.stages.mil {
        let model = ctx.classifier()?;
        let outcome = run_mil(&model, &ds, &mined, &ctx.cfg.mil)?;
        let mpath = ctx.artifact("mil_model.json");
        fs::write(&mpath, serde_json::to_string_pretty(&outcome.classifiers)? + "\n")?;
        ctx.output(&mpath)?;
        ctx.metrics = json!({
            "objectives": outcome.objectives,
            "converged": outcome.converged,
        });
        outcome.selected
    } else {
        info!("MIL disabled: keeping the top mined proposal per positive image");
        top_mined(&ds, &mined)
    };
    let path = ctx.artifact("selected.csv");
    save_selected(&selected, &path)?;
    ctx.output(&path)?;
    ctx.metrics["selected"] = json!(selected.len());
    Ok(())
}

/// Segments and tightens every selected box (in parallel, output in input
/// order). With `seg` off boxes pass through unchanged.
pub fn refine_selected(
    ds: &Dataset,
    selected: &[SelectedInstance],
    cfg: &RefineConfig,
    seg: bool,
) -> Result<Vec<(RefinedBox, Option<SegmentMask>)>> {
    let segmenter = TwoMeans(cfg.clone());
    selected
        .par_iter()
        .map(|s| {
            let img = ds
                .get(&s.image_id)
                .ok_or_else(|| Error::Config(format!("selected box for unknown image {}", s.image_id)))?;
            let (bbox, mask) = if seg {
                let (b, m) = refine_box(&segmenter, &img.image, &s.bbox)?;
                (b, Some(m))
            } else {
                (s.bbox, None)
            };
            Ok((
                RefinedBox {
                    class: s.class,
                    image_id: s.image_id.clone(),
                    bbox,
                    source: s.bbox,
                    score: s.score,
                    fallback: mask.as_ref().is_some_and(|m| m.fallback),
                },
                mask,
            ))
        })
        .collect()
}

fn refine_stage(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.train()?;
    let sel_path = ctx.input(&ctx.artifact("selected.csv"), "mil")?;
    let selected = load_selected(&sel_path)?;
    let results = refine_selected(&ds, &selected, &ctx.cfg.refine, ctx.cfg.stages.seg)?;
    let mask_dir = ctx.artifact("masks");
    if mask_dir.exists() {
        fs::remove_dir_all(&mask_dir)?;
    }
    if ctx.cfg.stages.dump_masks && ctx.cfg.stages.seg {
        fs::create_dir_all(&mask_dir)?;
        for (k, (r, m)) in results.iter().enumerate() {
            if let Some(m) = m {
                m.save_png(&mask_dir.join(format!("{k:05}_{}_c{}.png", r.image_id, r.class)))?;
            }
        }
        ctx.output(&mask_dir)?;
    }
    let refined: Vec<RefinedBox> = results.into_iter().map(|(r, _)| r).collect();
    let path = ctx.artifact("refined.csv");
    save_refined(&refined, &path)?;
    ctx.output(&path)?;
    ctx.metrics = json!({
        "boxes": refined.len(),
        "fallbacks": refined.iter().filter(|r| r.fallback).count(),
    });
    Ok(())
}

fn train_det(ctx: &mut Ctx) -> Result<()> {
    let ds = ctx.train()?;
    let props = ctx.proposals(&ds, false)?;
    let model = ctx.classifier()?;
    let ref_path = ctx.input(&ctx.artifact("refined.csv"), "refine")?;
    let refined = load_refined(&ref_path)?;
    let rois = build_roi_set(&props, &refined, ctx.cfg.bands);
    let feats = sample_features(&model, &ds, &rois)?;
    let (head, report) = train_detector(&rois, &feats, ds.num_classes, &ctx.cfg.detector)?;
    let path = ctx.artifact("detector.wsdm");
    save_detector(&head, &path)?;
    ctx.output(&path)?;
    let n = report.loss_history.len();
    let win = n.min(50);
    ctx.metrics = json!({
        "foreground": report.foreground,
        "background": report.background,
        "train_accuracy": report.train_accuracy,
        "final_window_loss": report.window_mean(n - win, win),
    });
    Ok(())
}

fn detect_stage(ctx: &mut Ctx) -> Result<()> {
    let test = ctx.test()?;
    let props = ctx.proposals(&test, true)?;
    let model = ctx.classifier()?;
    let det_path = ctx.input(&ctx.artifact("detector.wsdm"), "train-det")?;
    let head = load_detector(&det_path)?;
    let dets = detect_dataset(&head, &model, &test, &props, &ctx.cfg.detect)?;
    let path = ctx.artifact("detections.csv");
    save_detections(&dets, &path)?;
    ctx.output(&path)?;
    ctx.metrics = json!({ "detections": dets.len() });
    Ok(())
}

fn eval_stage(ctx: &mut Ctx) -> Result<()> {
    let det_path = ctx.input(&ctx.artifact("detections.csv"), "detect")?;
    let dets = load_detections(&det_path)?;
    let test = ctx.test()?;
    let train = ctx.train()?;
    let ref_path = ctx.input(&ctx.artifact("refined.csv"), "refine")?;
    let refined = load_refined(&ref_path)?;
    let mined_path = ctx.input(&ctx.artifact("mined.csv"), "mine")?;
    let mined = load_mined(&mined_path)?;
    let (report, curves) = evaluate(&ctx.cfg, &train, &test, &refined, &mined, &dets)?;
    let path = ctx.artifact("eval.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    ctx.output(&path)?;
    let pr = ctx.artifact("pr_curves.csv");
    crate::eval::save_pr_curves(&curves, &pr)?;
    ctx.output(&pr)?;
    ctx.metrics = json!({ "mean_corloc": report.mean_corloc, "map": report.map });
    Ok(())
}

fn report_stage(ctx: &mut Ctx) -> Result<()> {
    let eval_path = ctx.input(&ctx.artifact("eval.json"), "eval")?;
    let eval: EvalReport = serde_json::from_str(&fs::read_to_string(&eval_path)?)?;
    let train = ctx.train()?;
    let test = ctx.test()?;
    let train_props = ctx.proposals(&train, false)?;
    let test_props = ctx.proposals(&test, true)?;
    let model = ctx.classifier()?;
    let pool_path = ctx.input(&ctx.artifact("pool.csv"), "mine")?;
    let scores = crate::mining::load_pool(&pool_path)?;
    let report = build_report(&ctx.cfg, eval, &model, &train, &train_props, &test, &test_props, &scores)?;
    for p in write_report(&report, ctx.cfg.workdir())? {
        ctx.output(&p)?;
    }
    ctx.metrics = json!({ "ablation_rows": report.ablation.len(), "strategies": report.strategies.len() });
    Ok(())
}
