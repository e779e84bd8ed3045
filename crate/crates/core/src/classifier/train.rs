use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{expand_labels, prepare_input, loss_gradient, Architecture, ClassifierModel, ExpandedLabel, Params};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescales the batch gradient to at most this L2 norm; 0 disables.
    pub clip_norm: f64,
    /// Channels of the last conv layer.
    pub k: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            iterations: 300,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: 0.0,
            k: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-image loss of each mini-batch.
    pub loss_history: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over `[start, start + window)`.
    pub fn window_mean(&self, start: usize, window: usize) -> f64 {
        let w = &self.loss_history[start..(start + window).min(self.loss_history.len())];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

/// Mini-batch SGD on the summed multi-label loss. Ground-truth boxes are never
/// read; only image-level labels.
pub fn train_classifier(dataset: &Dataset, cfg: &ClassifierTrainConfig) -> Result<(ClassifierModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let arch = Architecture {
        k: cfg.k,
        ..Architecture::new(dataset.num_classes)
    };
    let inputs: Vec<Vec<f64>> = dataset
        .images
        .iter()
        .map(|i| prepare_input(&i.image, arch.input))
        .collect();
    let targets: Vec<ExpandedLabel> = dataset.images.iter().map(|i| expand_labels(&i.labels)).collect();
    let model = ClassifierModel::init(arch, cfg.seed);
    train_on_tensors(model, &inputs, &targets, cfg)
}

pub fn train_on_tensors(
    mut model: ClassifierModel,
    inputs: &[Vec<f64>],
    targets: &[ExpandedLabel],
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    let arch = *model.arch()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Empty("training tensors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut cursor = order.len();
    let mut velocity = Params::zeros(&arch);
    let mut report = TrainReport::default();
    let bs = cfg.batch_size.max(1).min(inputs.len());

    for iter in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push((inputs[i].as_slice(), &targets[i]));
        }
        let (loss, mut grad) = loss_gradient(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(iter));
        }
        report.loss_history.push(loss / bs as f64);
        if cfg.clip_norm > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                grad.scale(cfg.clip_norm / norm);
            }
        }
        if cfg.weight_decay > 0.0 {
            grad.axpy(cfg.weight_decay, &model.params);
        }
        velocity.scale(cfg.momentum);
        velocity.axpy(-cfg.learning_rate, &grad);
        model.params.axpy(1.0, &velocity);
        if model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(iter));
        }
        if iter % 50 == 0 {
            debug!("classifier iter {iter}: loss {:.4}", loss / bs as f64);
        }
    }
    model.params.round_to_f32();
    Ok((model, report))
}
