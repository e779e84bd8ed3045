//! Multiple instance learning over mined proposals: one linear
//! smoothed-hinge classifier per class, alternating between picking the best
//! instance of every positive bag and refitting.

mod io;
mod solver;

pub use io::{load_selected, save_selected};
pub use solver::{fit, objective, FitConfig};

use std::collections::BTreeMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::classifier::{ClassifierModel, FeatureMapStack};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mining::MinedSet;

/// Quadratically smoothed hinge and its derivative.
pub fn smoothed_hinge(z: f64) -> (f64, f64) {
    if z <= 0.0 {
        (0.5 - z, -1.0)
    } else if z < 1.0 {
        let d = 1.0 - z;
        (0.5 * d * d, -d)
    } else {
        (0.0, 0.0)
    }
}

/// Feature dimension for `k` last-conv channels.
pub fn feature_dim(k: usize) -> usize {
    k + 4
}

/// ROI average of each map over the box, then `(w/W, h/H, cx/W, cy/H)`.
pub fn roi_features(maps: &FeatureMapStack, width: u32, height: u32, b: &BoundingBox) -> Vec<f64> {
    let mut f = Vec::with_capacity(feature_dim(maps.k));
    match b.to_grid(width, height, maps.width, maps.height) {
        Some(g) => {
            let n = g.area() as f64;
            for k in 0..maps.k {
                let plane = maps.plane(k);
                let mut s = 0.0;
                for y in g.y1 as usize..g.y2 as usize {
                    let row = &plane[y * maps.width..(y + 1) * maps.width];
                    s += row[g.x1 as usize..g.x2 as usize].iter().sum::<f64>();
                }
                f.push(s / n);
            }
        }
        None => f.extend(std::iter::repeat(0.0).take(maps.k)),
    }
    let (cx, cy) = b.center();
    f.push(b.width() as f64 / width as f64);
    f.push(b.height() as f64 / height as f64);
    f.push(cx / width as f64);
    f.push(cy / height as f64);
    f
}

pub fn extract_instance_features(model: &ClassifierModel, image: &Image, b: &BoundingBox) -> Result<Vec<f64>> {
    let maps = model.feature_maps(image)?;
    Ok(roi_features(&maps, image.width(), image.height(), b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub bbox: BoundingBox,
    pub features: Vec<f64>,
    /// Fused mining score; seeds the first selection and caps negatives.
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub image_id: String,
    pub class: usize,
    pub polarity: Polarity,
    pub instances: Vec<Instance>,
}

impl Bag {
    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Latent instance labels of one bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentSelection {
    pub z: Vec<bool>,
}

impl LatentSelection {
    pub fn none(n: usize) -> Self {
        LatentSelection { z: vec![false; n] }
    }

    pub fn one(n: usize, i: usize) -> Self {
        let mut z = vec![false; n];
        z[i] = true;
        LatentSelection { z }
    }

    pub fn count(&self) -> usize {
        self.z.iter().filter(|&&v| v).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.z.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MilConfig {
    /// L2 weight `lambda` on `w` (the bias is not regularized).
    pub lambda: f64,
    pub outer_iterations: usize,
    /// SGD epochs per fit.
    pub inner_epochs: usize,
    pub learning_rate: f64,
    /// Negative instances kept per class, by highest mining score.
    pub negative_cap: usize,
    /// Score threshold `tau` for emitting extra positives.
    pub select_threshold: f64,
    /// Also alternate from the selection of a classifier fitted on every
    /// positive-bag instance, keeping the run with the lower objective.
    pub bag_start: bool,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            lambda: 1e-3,
            outer_iterations: 10,
            inner_epochs: 20,
            learning_rate: 0.05,
            negative_cap: 2000,
            select_threshold: 1.0,
            bag_start: true,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("mil lambda must be positive".into()));
        }
        if self.outer_iterations == 0 {
            return Err(Error::Config("mil outer_iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("mil learning_rate must be positive".into()));
        }
        if self.negative_cap == 0 {
            return Err(Error::Config("mil negative_cap must be at least 1".into()));
        }
        Ok(())
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            epochs: self.inner_epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilClassifier {
    pub class: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: MilConfig,
}

impl MilClassifier {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilReport {
    /// Objective after the initial fit and after every later outer round.
    pub objectives: Vec<f64>,
    /// Selections stopped changing before the iteration budget ran out.
    pub converged: bool,
    pub negatives_used: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax_by<F: Fn(usize) -> f64>(n: usize, prefer: Option<usize>, f: F) -> usize {
    let mut best = prefer.unwrap_or(0);
    let mut best_v = f(best);
    for i in 0..n {
        let v = f(i);
        // strictly better wins; among ties the current choice stays, then the lower index
        if v > best_v || (v == best_v && prefer.is_none() && i < best) {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Alternating MIL. Returns the classifier, one selection per input bag (in
/// input order) and the objective trace.
pub fn mil_train(bags: &[Bag], cfg: &MilConfig) -> Result<(MilClassifier, Vec<LatentSelection>, MilReport)> {
    cfg.validate()?;
    let positives: Vec<usize> = (0..bags.len()).filter(|&i| bags[i].is_positive()).collect();
    if positives.is_empty() {
        return Err(Error::Empty("mil needs at least one positive bag".into()));
    }
    if positives.len() == bags.len() {
        return Err(Error::Empty("mil needs at least one negative bag".into()));
    }
    let class = bags[positives[0]].class;
    let dim = bags
        .iter()
        .flat_map(|b| b.instances.first())
        .map(|i| i.features.len())
        .next()
        .unwrap_or(0);
    for b in bags {
        if b.is_positive() && b.instances.is_empty() {
            return Err(Error::Empty(format!("positive bag {} has no instances", b.image_id)));
        }
        for inst in &b.instances {
            if inst.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: inst.features.len(),
                });
            }
        }
    }

    let mut negs: Vec<(usize, usize)> = bags
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_positive())
        .flat_map(|(bi, b)| (0..b.instances.len()).map(move |ii| (bi, ii)))
        .collect();
    if negs.is_empty() {
        return Err(Error::Empty("negative bags have no instances".into()));
    }
    if negs.len() > cfg.negative_cap {
        negs.sort_by(|a, b| {
            bags[b.0].instances[b.1]
                .prior
                .total_cmp(&bags[a.0].instances[a.1].prior)
                .then(a.cmp(b))
        });
        negs.truncate(cfg.negative_cap);
        negs.sort();
    }
    let neg_x: Vec<&[f64]> = negs.iter().map(|&(b, i)| bags[b].instances[i].features.as_slice()).collect();

    let fcfg = cfg.fit_config();
    let from_prior: Vec<usize> = positives
        .iter()
        .map(|&bi| {
            let inst = &bags[bi].instances;
            argmax_by(inst.len(), None, |i| inst[i].prior)
        })
        .collect();
    let mut run = alternate(bags, &positives, &neg_x, from_prior, cfg);
    if cfg.bag_start {
        // classifier that treats every positive-bag instance as positive
        let all: Vec<&[f64]> = positives
            .iter()
            .flat_map(|&bi| bags[bi].instances.iter().map(|i| i.features.as_slice()))
            .collect();
        let (mut w, mut b) = (vec![0.0; dim], 0.0);
        fit(&all, &neg_x, &mut w, &mut b, &fcfg);
        let from_bags: Vec<usize> = positives
            .iter()
            .map(|&bi| {
                let inst = &bags[bi].instances;
                argmax_by(inst.len(), None, |i| dot(&w, &inst[i].features) + b)
            })
            .collect();
        if from_bags != run.sel {
            let other = alternate(bags, &positives, &neg_x, from_bags, cfg);
            if other.final_objective() < run.final_objective() {
                debug!("mil class {class}: bag-level start wins");
                run = other;
            }
        }
    }
    let Run { w, b, sel, report } = run;

    let mut selections: Vec<LatentSelection> = bags.iter().map(|bag| LatentSelection::none(bag.instances.len())).collect();
    for (&bi, &i) in positives.iter().zip(&sel) {
        selections[bi] = LatentSelection::one(bags[bi].instances.len(), i);
    }
    Ok((
        MilClassifier {
            class,
            weights: w,
            bias: b,
            config: cfg.clone(),
        },
        selections,
        report,
    ))
}

struct Run {
    w: Vec<f64>,
    b: f64,
    sel: Vec<usize>,
    report: MilReport,
}

impl Run {
    fn final_objective(&self) -> f64 {
        *self.report.objectives.last().expect("at least one fit")
    }
}

/// Fit on the current selection, reselect each bag's argmax, refit warm;
/// stops when the selection is a fixed point. A refit is only kept when it
/// does not raise the objective.
fn alternate(bags: &[Bag], positives: &[usize], neg_x: &[&[f64]], mut sel: Vec<usize>, cfg: &MilConfig) -> Run {
    let pos_x = |sel: &[usize]| -> Vec<&[f64]> {
        positives
            .iter()
            .zip(sel)
            .map(|(&bi, &i)| bags[bi].instances[i].features.as_slice())
            .collect()
    };
    let reselect = |sel: &[usize], w: &[f64], b: f64| -> Vec<usize> {
        positives
            .iter()
            .zip(sel)
            .map(|(&bi, &cur)| {
                let inst = &bags[bi].instances;
                argmax_by(inst.len(), Some(cur), |i| dot(w, &inst[i].features) + b)
            })
            .collect()
    };
    let fcfg = cfg.fit_config();
    let dim = bags[positives[0]].instances[0].features.len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    fit(&pos_x(&sel), neg_x, &mut w, &mut b, &fcfg);
    let mut report = MilReport {
        objectives: vec![objective(&pos_x(&sel), neg_x, &w, b, cfg.lambda)],
        converged: false,
        negatives_used: neg_x.len(),
    };
    for round in 1..cfg.outer_iterations {
        let next = reselect(&sel, &w, b);
        if next == sel {
            report.converged = true;
            break;
        }
        sel = next;
        let (mut w2, mut b2) = (w.clone(), b);
        fit(&pos_x(&sel), neg_x, &mut w2, &mut b2, &fcfg);
        let before = objective(&pos_x(&sel), neg_x, &w, b, cfg.lambda);
        let after = objective(&pos_x(&sel), neg_x, &w2, b2, cfg.lambda);
        if after <= before {
            w = w2;
            b = b2;
        }
        let obj = before.min(after);
        debug!("mil round {round}: objective {obj:.6}");
        report.objectives.push(obj);
    }
    if !report.converged {
        report.converged = reselect(&sel, &w, b) == sel;
    }
    Run { w, b, sel, report }
}

/// One selected positive instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedInstance {
    pub class: usize,
    pub image_id: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Every instance of each positive bag scoring at least `tau`, highest score
/// first. The bag's argmax is always emitted. Instances of equal score keep
/// bag order.
pub fn select_instances(clf: &MilClassifier, bags: &[Bag], tau: f64) -> Vec<SelectedInstance> {
    let mut out = Vec::new();
    for bag in bags.iter().filter(|b| b.is_positive() && !b.instances.is_empty()) {
        let scores: Vec<f64> = bag.instances.iter().map(|i| clf.score(&i.features)).collect();
        let best = argmax_by(scores.len(), None, |i| scores[i]);
        let mut order: Vec<usize> = (0..scores.len()).filter(|&i| i == best || scores[i] >= tau).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        // the argmax leads even when NaN scores would confuse the sort
        order.retain(|&i| i != best);
        order.insert(0, best);
        out.extend(order.into_iter().map(|i| SelectedInstance {
            class: bag.class,
            image_id: bag.image_id.clone(),
            bbox: bag.instances[i].bbox,
            score: scores[i],
        }));
    }
    out
}

/// Positive and negative bags of `class` from the mined proposals, with ROI
/// features taken from the classifier's last conv layer. Bags follow dataset
/// order.
pub fn build_bags(model: &ClassifierModel, dataset: &Dataset, mined: &MinedSet, class: usize) -> Result<Vec<Bag>> {
    let maps = feature_cache(model, dataset, mined)?;
    bags_from_cache(dataset, mined, &maps, class)
}

/// Last-conv maps of every image that has mined proposals.
pub fn feature_cache(
    model: &ClassifierModel,
    dataset: &Dataset,
    mined: &MinedSet,
) -> Result<BTreeMap<String, FeatureMapStack>> {
    let ids: Vec<&str> = dataset
        .images
        .iter()
        .filter(|i| mined.keys().any(|(id, _)| id == &i.id))
        .map(|i| i.id.as_str())
        .collect();
    ids.par_iter()
        .map(|id| {
            let img = dataset.get(id).expect("id from dataset");
            Ok((id.to_string(), model.feature_maps(&img.image)?))
        })
        .collect()
}

pub fn bags_from_cache(
    dataset: &Dataset,
    mined: &MinedSet,
    maps: &BTreeMap<String, FeatureMapStack>,
    class: usize,
) -> Result<Vec<Bag>> {
    if class >= dataset.num_classes {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: dataset.num_classes,
        });
    }
    let mut bags = Vec::new();
    for img in &dataset.images {
        let Some(props) = mined.get(&(img.id.clone(), class)) else {
            if img.has_class(class) {
                warn!("{}: positive for class {class} but nothing was mined", img.id);
            }
            continue;
        };
        let Some(m) = maps.get(&img.id) else {
            return Err(Error::missing(&img.id, "feature maps for a mined image"));
        };
        let (w, h) = (img.image.width(), img.image.height());
        bags.push(Bag {
            image_id: img.id.clone(),
            class,
            polarity: if img.has_class(class) {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
            instances: props
                .iter()
                .map(|p| Instance {
                    bbox: p.bbox,
                    features: roi_features(m, w, h, &p.bbox),
                    prior: p.fused,
                })
                .collect(),
        });
    }
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;

    fn b(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn inst(f: &[f64], prior: f64) -> Instance {
        Instance {
            bbox: b(0, 0, 4, 4),
            features: f.to_vec(),
            prior,
        }
    }

    fn bag(id: &str, pos: bool, inst: Vec<Instance>) -> Bag {
        Bag {
            image_id: id.into(),
            class: 0,
            polarity: if pos { Polarity::Positive } else { Polarity::Negative },
            instances: inst,
        }
    }

    #[test]
    fn hinge_pieces() {
        assert_eq!(smoothed_hinge(1.5), (0.0, 0.0));
        assert_eq!(smoothed_hinge(0.0), (0.5, -1.0));
        assert_eq!(smoothed_hinge(1.0), (0.0, 0.0));
        assert_eq!(smoothed_hinge(-2.0), (2.5, -1.0));
        assert_eq!(smoothed_hinge(0.5), (0.125, -0.5));
        // the quadratic piece agrees at the left join
        let e = 1e-12;
        assert!((smoothed_hinge(e).0 - 0.5).abs() < 1e-11);
    }

    #[test]
    fn full_box_features_are_gap_plus_unit_geometry() {
        let m = ClassifierModel::init(Architecture::new(2), 4);
        let mut img = Image::filled(64, 64, [0.2, 0.5, 0.7]);
        img.fill_box(&b(10, 12, 30, 40), [0.9, 0.1, 0.1]);
        let f = extract_instance_features(&m, &img, &img.bounds()).unwrap();
        assert_eq!(f.len(), feature_dim(32));
        let maps = m.feature_maps(&img).unwrap();
        for k in 0..maps.k {
            let gap = maps.plane(k).iter().sum::<f64>() / (maps.width * maps.height) as f64;
            assert!((f[k] - gap).abs() < 1e-12);
        }
        assert_eq!(&f[32..], &[1.0, 1.0, 0.5, 0.5]);
        let g = extract_instance_features(&m, &img, &b(3, 3, 9, 20)).unwrap();
        assert_eq!(g, extract_instance_features(&m, &img, &b(3, 3, 9, 20)).unwrap());
        assert_eq!(g.len(), 36);
    }

    #[test]
    fn singleton_bag_forced() {
        let bags = vec![
            bag("p", true, vec![inst(&[-5.0, 0.0], 0.0)]),
            bag("n", false, vec![inst(&[1.0, 1.0], 0.0), inst(&[2.0, 0.0], 0.0)]),
        ];
        let (_, sel, _) = mil_train(&bags, &MilConfig::default()).unwrap();
        assert_eq!(sel[0], LatentSelection::one(1, 0));
        assert_eq!(sel[1].count(), 0);
    }

    #[test]
    fn needs_both_polarities_and_one_dimension() {
        let cfg = MilConfig::default();
        let pos = bag("p", true, vec![inst(&[1.0], 0.0)]);
        let neg = bag("n", false, vec![inst(&[0.0], 0.0)]);
        assert!(mil_train(&[neg.clone()], &cfg).is_err());
        assert!(mil_train(&[pos.clone()], &cfg).is_err());
        let odd = bag("q", true, vec![inst(&[1.0, 2.0], 0.0)]);
        assert!(matches!(mil_train(&[pos, neg, odd], &cfg), Err(Error::Dimension { .. })));
    }

    #[test]
    fn objective_never_increases() {
        let bags = vec![
            bag("a", true, vec![inst(&[0.0, 0.0], 1.0), inst(&[3.0, 2.0], 0.0), inst(&[0.2, -1.0], 0.5)]),
            bag("b", true, vec![inst(&[-1.0, 0.5], 1.0), inst(&[2.5, 3.0], 0.0)]),
            bag("c", true, vec![inst(&[2.8, 2.2], 0.0), inst(&[-0.5, -0.5], 0.9)]),
            bag("n1", false, vec![inst(&[0.0, 0.0], 0.0), inst(&[-1.0, 0.0], 0.0)]),
            bag("n2", false, vec![inst(&[0.5, -1.0], 0.0), inst(&[-0.5, 0.5], 0.0)]),
        ];
        let (_, sel, rep) = mil_train(&bags, &MilConfig::default()).unwrap();
        for w in rep.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", rep.objectives);
        }
        assert!(sel[..3].iter().all(|s| s.count() == 1));
        assert!(sel[3..].iter().all(|s| s.count() == 0));
    }

    #[test]
    fn duplicated_bags_select_the_same() {
        let bags = vec![
            bag("a", true, vec![inst(&[0.0, 0.0], 1.0), inst(&[3.0, 2.0], 0.0)]),
            bag("b", true, vec![inst(&[-1.0, 0.5], 0.2), inst(&[2.5, 3.0], 0.1)]),
            bag("n", false, vec![inst(&[0.0, 0.0], 0.0), inst(&[-1.0, 0.0], 0.0)]),
        ];
        let twice: Vec<Bag> = bags.iter().chain(bags.iter()).cloned().collect();
        let (_, one, _) = mil_train(&bags, &MilConfig::default()).unwrap();
        let (_, two, _) = mil_train(&twice, &MilConfig::default()).unwrap();
        assert_eq!(&two[..3], &one[..]);
        assert_eq!(&two[3..], &one[..]);
    }

    #[test]
    fn threshold_extremes_and_table() {
        let clf = MilClassifier {
            class: 0,
            weights: vec![1.0],
            bias: 0.0,
            config: MilConfig::default(),
        };
        let bags = vec![
            bag("a", true, vec![inst(&[0.2], 0.0), inst(&[0.9], 0.0), inst(&[0.5], 0.0)]),
            bag("b", true, vec![inst(&[-1.0], 0.0), inst(&[-2.0], 0.0)]),
            bag("n", false, vec![inst(&[5.0], 0.0)]),
        ];
        let top = select_instances(&clf, &bags, f64::INFINITY);
        assert_eq!(top.iter().map(|s| (s.image_id.as_str(), s.score)).collect::<Vec<_>>(), vec![("a", 0.9), ("b", -1.0)]);
        assert_eq!(select_instances(&clf, &bags, f64::NEG_INFINITY).len(), 5);
        let mid = select_instances(&clf, &bags, 0.4);
        assert_eq!(mid.iter().map(|s| s.score).collect::<Vec<_>>(), vec![0.9, 0.5, -1.0]);
    }
}
