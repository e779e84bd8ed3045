use log::{debug, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{smooth_l1, RoiSample};
use crate::error::{Error, Result};

/// Linear (C+1)-way classifier and per-class box regressors over
/// standardized ROI features.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub num_classes: usize,
    pub dim: usize,
    pub feat_mean: Vec<f64>,
    pub feat_scale: Vec<f64>,
    /// `(C+1) x D`, row 0 is background.
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
    /// `C x 4 x D`.
    pub reg_w: Vec<f64>,
    pub reg_b: Vec<f64>,
}

impl DetectorModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        DetectorModel {
            num_classes,
            dim,
            feat_mean: vec![0.0; dim],
            feat_scale: vec![1.0; dim],
            cls_w: vec![0.0; (num_classes + 1) * dim],
            cls_b: vec![0.0; num_classes + 1],
            reg_w: vec![0.0; num_classes * 4 * dim],
            reg_b: vec![0.0; num_classes * 4],
        }
    }

    fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: f.len(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.feat_mean)
            .zip(&self.feat_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn logits_normalized(&self, x: &[f64]) -> Vec<f64> {
        (0..=self.num_classes)
            .map(|k| dot(&self.cls_w[k * self.dim..(k + 1) * self.dim], x) + self.cls_b[k])
            .collect()
    }

    fn regress_normalized(&self, x: &[f64], class: usize) -> [f64; 4] {
        let mut t = [0.0; 4];
        for (j, tj) in t.iter_mut().enumerate() {
            let row = (class * 4 + j) * self.dim;
            *tj = dot(&self.reg_w[row..row + self.dim], x) + self.reg_b[class * 4 + j];
        }
        t
    }

    /// Softmax over background and the `C` classes.
    pub fn probabilities(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok(softmax(&self.logits_normalized(&self.normalize(f))))
    }

    /// Regression offsets of `class` for a raw feature vector.
    pub fn regress(&self, f: &[f64], class: usize) -> [f64; 4] {
        self.regress_normalized(&self.normalize(f), class)
    }

    fn blobs_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.cls_w, &mut self.cls_b, &mut self.reg_w, &mut self.reg_b]
    }

    pub(crate) fn blobs(&self) -> [&Vec<f64>; 6] {
        [
            &self.feat_mean,
            &self.feat_scale,
            &self.cls_w,
            &self.cls_b,
            &self.reg_w,
            &self.reg_b,
        ]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the smooth-L1 regression term.
    pub lambda_reg: f64,
    /// Largest share of a mini-batch given to foreground samples.
    pub fg_fraction: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            iterations: 1500,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            lambda_reg: 1.0,
            fg_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorTrainReport {
    pub loss_history: Vec<f64>,
    /// Classification accuracy over the whole ROI set after training.
    pub train_accuracy: f64,
    pub foreground: usize,
    pub background: usize,
}

impl DetectorTrainReport {
    pub fn window_mean(&self, start: usize, window: usize) -> f64 {
        let w = &self.loss_history[start..(start + window).min(self.loss_history.len())];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

/// Mean loss of the listed samples (features already standardized) and its
/// gradient in `[cls_w, cls_b, reg_w, reg_b]` order.
pub fn detector_loss(
    model: &DetectorModel,
    x: &[Vec<f64>],
    samples: &[RoiSample],
    batch: &[usize],
    lambda_reg: f64,
) -> (f64, [Vec<f64>; 4]) {
    let d = model.dim;
    let mut g = [
        vec![0.0; model.cls_w.len()],
        vec![0.0; model.cls_b.len()],
        vec![0.0; model.reg_w.len()],
        vec![0.0; model.reg_b.len()],
    ];
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for &i in batch {
        let xi = &x[i];
        let s = &samples[i];
        let p = softmax(&model.logits_normalized(xi));
        loss -= p[s.label].max(1e-300).ln();
        for (k, pk) in p.iter().enumerate() {
            let dz = (pk - f64::from(u8::from(k == s.label))) / n;
            for (gw, xv) in g[0][k * d..(k + 1) * d].iter_mut().zip(xi) {
                *gw += dz * xv;
            }
            g[1][k] += dz;
        }
        if let (Some(t), true) = (s.target, s.label > 0 && lambda_reg != 0.0) {
            let c = s.label - 1;
            let pred = model.regress_normalized(xi, c);
            for j in 0..4 {
                let (l, dl) = smooth_l1(pred[j] - t[j]);
                loss += lambda_reg * l;
                let dz = lambda_reg * dl / n;
                let row = (c * 4 + j) * d;
                for (gw, xv) in g[2][row..row + d].iter_mut().zip(xi) {
                    *gw += dz * xv;
                }
                g[3][c * 4 + j] += dz;
            }
        }
    }
    (loss / n, g)
}

/// Seeded mini-batch SGD with at most `fg_fraction` foreground per batch.
pub fn train_detector(
    samples: &[RoiSample],
    features: &[Vec<f64>],
    num_classes: usize,
    cfg: &DetectorTrainConfig,
) -> Result<(DetectorModel, DetectorTrainReport)> {
    if samples.len() != features.len() {
        return Err(Error::Dimension {
            expected: samples.len(),
            got: features.len(),
        });
    }
    let fg: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label > 0).collect();
    let bg: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 0).collect();
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::Empty("detector training needs foreground and background samples".into()));
    }
    for c in 0..num_classes {
        if !fg.iter().any(|&i| samples[i].label == c + 1) {
            warn!("class {c} has no foreground ROI samples");
        }
    }
    if let Some(s) = samples.iter().find(|s| s.label > num_classes) {
        return Err(Error::ClassOutOfRange {
            class: s.label - 1,
            num_classes,
        });
    }
    let dim = features[0].len();
    let mut model = DetectorModel::zeros(num_classes, dim);
    for f in features {
        if f.len() != dim {
            return Err(Error::Dimension { expected: dim, got: f.len() });
        }
    }
    let n = features.len() as f64;
    for j in 0..dim {
        let mean = features.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = features.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n;
        model.feat_mean[j] = mean;
        model.feat_scale[j] = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = features.iter().map(|f| model.normalize(f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for v in model.cls_w.iter_mut() {
        *v = rng.gen_range(-0.01..0.01);
    }
    let bs = cfg.batch_size.max(1);
    let n_fg = ((bs as f64 * cfg.fg_fraction).round() as usize).clamp(1, bs).min(fg.len());
    let n_bg = (bs - n_fg).min(bg.len());
    let mut velocity = [
        vec![0.0; model.cls_w.len()],
        vec![0.0; model.cls_b.len()],
        vec![0.0; model.reg_w.len()],
        vec![0.0; model.reg_b.len()],
    ];
    let mut report = DetectorTrainReport {
        foreground: fg.len(),
        background: bg.len(),
        ..Default::default()
    };
    for iter in 0..cfg.iterations {
        let mut batch: Vec<usize> = sample(&mut rng, fg.len(), n_fg).into_iter().map(|i| fg[i]).collect();
        batch.extend(sample(&mut rng, bg.len(), n_bg).into_iter().map(|i| bg[i]));
        let (loss, grads) = detector_loss(&model, &x, samples, &batch, cfg.lambda_reg);
        if !loss.is_finite() {
            return Err(Error::Diverged(iter));
        }
        report.loss_history.push(loss);
        for (k, (blob, (g, v))) in model.blobs_mut().into_iter().zip(grads.iter().zip(velocity.iter_mut())).enumerate() {
            // weight decay on the weight matrices only
            let wd = if k % 2 == 0 { cfg.weight_decay } else { 0.0 };
            for ((p, gi), vi) in blob.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = cfg.momentum * *vi - cfg.learning_rate * (gi + wd * *p);
                *p += *vi;
            }
        }
        if iter % 250 == 0 {
            debug!("detector iter {iter}: loss {loss:.4}");
        }
    }
    let correct = x
        .iter()
        .zip(samples)
        .filter(|(xi, s)| {
            let z = model.logits_normalized(xi);
            let arg = (0..z.len()).fold(0, |a, k| if z[k] > z[a] { k } else { a });
            arg == s.label
        })
        .count();
    report.train_accuracy = correct as f64 / samples.len() as f64;
    Ok((model, report))
}
