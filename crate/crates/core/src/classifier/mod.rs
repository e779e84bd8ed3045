//! Multi-label classification network with a global-average-pooled last conv
//! layer, so class scores decompose over spatial positions.

mod checkpoint;
mod labels;
pub mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use labels::{
    batch_loss, expand_labels, multilabel_loss, sigmoid, ExpandedLabel, ProbabilityVector, PROB_EPS,
};
pub use net::{Architecture, Params};
pub use train::{train_classifier, train_on_tensors, ClassifierTrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Constant subtracted from every pixel before the first convolution.
pub const INPUT_OFFSET: f64 = 0.5;

/// Planar, centred network input for an image of any size.
pub fn prepare_input(image: &Image, side: usize) -> Vec<f64> {
    let mut x = image.to_planar(side as u32);
    for v in x.iter_mut() {
        *v -= INPUT_OFFSET;
    }
    x
}

/// The `K` last-conv activation maps of one image, each `width x height`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStack {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    /// `K` planes, row-major.
    pub data: Vec<f64>,
}

impl FeatureMapStack {
    pub fn plane(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn at(&self, k: usize, x: usize, y: usize) -> f64 {
        self.data[(k * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassifierModel {
    pub arch: Option<Architecture>,
    pub params: Params,
}

impl ClassifierModel {
    pub fn zeros(arch: Architecture) -> Self {
        ClassifierModel {
            params: Params::zeros(&arch),
            arch: Some(arch),
        }
    }

    /// He-uniform conv weights, zero conv biases, class layer uniform in
    /// `(-0.05, 0.05)`. Values are rounded to `f32` so checkpoints are exact.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ClassifierModel::zeros(arch);
        let b1 = (6.0 / 27.0f64).sqrt();
        let b2 = (6.0 / (arch.conv1 * 9) as f64).sqrt();
        for v in m.params.blobs[net::CONV1_W].iter_mut() {
            *v = rng.gen_range(-b1..b1);
        }
        for v in m.params.blobs[net::CONV2_W].iter_mut() {
            *v = rng.gen_range(-b2..b2);
        }
        for v in m.params.blobs[net::FC_W].iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        m.params.round_to_f32();
        m
    }

    pub fn arch(&self) -> Result<&Architecture> {
        match &self.arch {
            Some(a) if self.params.matches(a) => Ok(a),
            _ => Err(Error::Uninitialized),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.arch.map_or(0, |a| a.num_classes)
    }

    /// Forward pass on an already prepared planar input tensor.
    pub fn forward_tensor(&self, x: &[f64]) -> Result<net::Trace> {
        let arch = self.arch()?;
        let expected = 3 * arch.input * arch.input;
        if x.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: x.len(),
            });
        }
        Ok(net::forward(arch, &self.params, x))
    }

    /// Class probabilities and last-conv feature maps. Images of any size are
    /// resampled bilinearly to the network input.
    pub fn forward(&self, image: &Image) -> Result<(ProbabilityVector, FeatureMapStack)> {
        let arch = *self.arch()?;
        let trace = self.forward_tensor(&prepare_input(image, arch.input))?;
        let side = arch.map_side();
        Ok((
            ProbabilityVector::from_logits(&trace.logits),
            FeatureMapStack {
                k: arch.k,
                width: side,
                height: side,
                data: trace.maps,
            },
        ))
    }

    pub fn predict(&self, image: &Image) -> Result<ProbabilityVector> {
        let arch = *self.arch()?;
        let trace = self.forward_tensor(&prepare_input(image, arch.input))?;
        Ok(ProbabilityVector::from_logits(&trace.logits))
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f64>> {
        let arch = *self.arch()?;
        Ok(self.forward_tensor(&prepare_input(image, arch.input))?.logits)
    }

    pub fn feature_maps(&self, image: &Image) -> Result<FeatureMapStack> {
        Ok(self.forward(image)?.1)
    }

    /// `w_k^c` as a `C x K` matrix (one row per class).
    pub fn class_weights(&self) -> Result<Vec<Vec<f64>>> {
        let arch = self.arch()?;
        Ok(self.params.blobs[net::FC_W]
            .chunks_exact(arch.k)
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn class_bias(&self) -> Result<&[f64]> {
        self.arch()?;
        Ok(&self.params.blobs[net::FC_B])
    }
}

/// Batch loss and its exact gradient with respect to every parameter.
/// Each batch element is a planar input tensor with its label vector.
pub fn loss_gradient(model: &ClassifierModel, batch: &[(&[f64], &ExpandedLabel)]) -> Result<(f64, Params)> {
    let arch = *model.arch()?;
    if batch.is_empty() {
        return Err(Error::Empty("gradient of an empty batch".into()));
    }
    let mut grad = Params::zeros(&arch);
    let mut loss = 0.0;
    for (x, t) in batch {
        if t.num_classes() != arch.num_classes {
            return Err(Error::Dimension {
                expected: 2 * arch.num_classes,
                got: t.0.len(),
            });
        }
        let trace = model.forward_tensor(x)?;
        let p = ProbabilityVector::from_logits(&trace.logits);
        loss += multilabel_loss(&p, t)?;
        let dlogits: Vec<f64> = (0..arch.num_classes)
            .map(|c| p.present(c) - t.0[2 * c] as f64)
            .collect();
        net::backward(&arch, &model.params, &trace, &dlogits, &mut grad);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_class_layer_gives_half() {
        let mut m = ClassifierModel::init(Architecture::new(3), 1);
        m.params.blobs[net::FC_W].fill(0.0);
        m.params.blobs[net::FC_B].fill(0.0);
        let img = Image::filled(64, 64, [0.3, 0.6, 0.1]);
        let p = m.predict(&img).unwrap();
        for c in 0..3 {
            assert_eq!(p.present(c), 0.5);
            assert_eq!(p.absent(c), 0.5);
        }
    }

    #[test]
    fn uninitialized_model_errors() {
        let m = ClassifierModel::default();
        assert!(matches!(
            m.predict(&Image::filled(64, 64, [0.0; 3])),
            Err(Error::Uninitialized)
        ));
    }

    #[test]
    fn shapes_and_relu() {
        let arch = Architecture {
            input: 64,
            conv1: 16,
            k: 8,
            num_classes: 3,
        };
        let m = ClassifierModel::init(arch, 2);
        let w = m.class_weights().unwrap();
        assert_eq!((w.len(), w[0].len()), (3, 8));
        let img = Image::filled(40, 50, [0.9, 0.2, 0.4]);
        let maps = m.feature_maps(&img).unwrap();
        assert_eq!((maps.k, maps.width, maps.height), (8, 32, 32));
        assert!(maps.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn constant_image_maps_are_deterministic_and_flat_inside() {
        let mut m = ClassifierModel::init(Architecture::new(2), 3);
        m.params.blobs[net::CONV1_B].fill(0.1);
        m.params.blobs[net::CONV2_B].iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.01);
        let zero = Image::filled(64, 64, [0.0; 3]);
        let a = m.feature_maps(&zero).unwrap();
        assert_eq!(a, m.feature_maps(&zero).unwrap());
        // away from the zero padding every position sees the same input
        for k in 0..a.k {
            let v = a.at(k, 5, 5);
            for y in 3..a.height - 3 {
                for x in 3..a.width - 3 {
                    assert!((a.at(k, x, y) - v).abs() < 1e-12);
                }
            }
        }
    }
}
