//! Class-specific proposal mining: contrast scores from mask-out images,
//! activation scores from class activation maps, min-max normalization,
//! weighted fusion and top-M selection.

mod cam;
mod contrast;
mod fuse;
mod io;

pub use cam::{
    activation_score, box_response, class_activation_map, class_activation_maps, image_box_response,
    ActivationMap, ActivationScore, Response,
};
pub use contrast::{contrast_score, contrast_scores, mask_out, region_image, MaskOutStrategy};
pub use fuse::{normalize_and_fuse, ranking_order, top_m_select, FuseFlags, FusionWeights, ScoredProposal};
pub use io::{load_mined, load_pool, save_mined, save_pool, MinedSet};

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::classifier::ClassifierModel;
use crate::dataset::{Dataset, Proposal, ProposalSet};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub strategy: MaskOutStrategy,
    /// Weight of the size-prior term of the activation score.
    pub alpha: f64,
    pub fusion: FusionWeights,
    /// Proposals kept per image and class.
    pub top_m: usize,
    pub use_contrast: bool,
    pub use_activation: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            strategy: MaskOutStrategy::InOut,
            alpha: 5.0,
            fusion: FusionWeights::default(),
            top_m: 50,
            use_contrast: true,
            use_activation: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_m == 0 {
            return Err(Error::Config("top_m must be at least 1".into()));
        }
        if !self.use_contrast && !self.use_activation {
            return Err(Error::Config("mining needs contrast or activation scores".into()));
        }
        Ok(())
    }

    /// Channel weights with disabled channels zeroed.
    pub fn effective_weights(&self) -> FusionWeights {
        FusionWeights {
            contrast: if self.use_contrast { self.fusion.contrast } else { 0.0 },
            activation: if self.use_activation { self.fusion.activation } else { 0.0 },
        }
    }
}

/// Raw per-class scores of every usable proposal of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub image_id: String,
    /// Index into the image's proposal list for each scored box.
    pub indices: Vec<usize>,
    pub boxes: Vec<BoundingBox>,
    /// `[box][class]`
    pub contrast: Vec<Vec<f64>>,
    /// `[box][class]`
    pub activation: Vec<Vec<f64>>,
}

impl ImageScores {
    pub fn num_classes(&self) -> usize {
        self.contrast.first().map_or(0, Vec::len)
    }

    /// Raw pool for one class, ready for [`normalize_and_fuse`].
    pub fn class_pool(&self, class: usize) -> Vec<ScoredProposal> {
        (0..self.boxes.len())
            .map(|i| {
                ScoredProposal::raw(
                    self.indices[i],
                    self.boxes[i],
                    class,
                    self.contrast[i][class],
                    self.activation[i][class],
                )
            })
            .collect()
    }
}

/// Scores every proposal of one image for all classes. Proposals whose crop
/// is smaller than 2x2 are skipped. Contrast is left at 0 when
/// `with_contrast` is false.
pub fn score_image(
    model: &ClassifierModel,
    image_id: &str,
    image: &Image,
    proposals: &[Proposal],
    mean: [f64; 3],
    strategy: MaskOutStrategy,
    alpha: f64,
    with_contrast: bool,
) -> Result<ImageScores> {
    let c = model.num_classes();
    let maps = class_activation_maps(model, image)?;
    let whole = match strategy {
        MaskOutStrategy::WholeOut if with_contrast => Some(model.predict(image)?),
        _ => None,
    };
    let usable: Vec<(usize, BoundingBox)> = proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.bbox.width() >= 2 && p.bbox.height() >= 2)
        .map(|(i, p)| (i, p.bbox))
        .collect();
    if usable.len() < proposals.len() {
        warn!(
            "{image_id}: skipped {} proposals smaller than 2x2",
            proposals.len() - usable.len()
        );
    }
    let contrast: Vec<Vec<f64>> = if with_contrast {
        usable
            .par_iter()
            .map(|(_, b)| contrast_scores(model, image, b, strategy, mean, whole.as_ref()))
            .collect::<Result<_>>()?
    } else {
        vec![vec![0.0; c]; usable.len()]
    };
    let (w, h) = (image.width(), image.height());
    let activation = usable
        .iter()
        .map(|(_, b)| maps.iter().map(|m| activation_score(m, b, alpha, w, h).value).collect())
        .collect();
    Ok(ImageScores {
        image_id: image_id.to_string(),
        indices: usable.iter().map(|(i, _)| *i).collect(),
        boxes: usable.iter().map(|(_, b)| *b).collect(),
        contrast,
        activation,
    })
}

/// Scores every image of `dataset` that has proposals, in dataset order.
pub fn score_dataset(
    model: &ClassifierModel,
    dataset: &Dataset,
    proposals: &ProposalSet,
    mean: [f64; 3],
    cfg: &MiningConfig,
) -> Result<Vec<ImageScores>> {
    dataset
        .images
        .iter()
        .map(|img| {
            let props = proposals
                .get(&img.id)
                .map(Vec::as_slice)
                .unwrap_or_default();
            score_image(model, &img.id, &img.image, props, mean, cfg.strategy, cfg.alpha, cfg.use_contrast)
        })
        .collect()
}

/// Full ranked pool of one image for one class.
pub fn rank_class(scores: &ImageScores, class: usize, cfg: &MiningConfig) -> Result<Vec<ScoredProposal>> {
    Ok(normalize_and_fuse(scores.class_pool(class), cfg.effective_weights())?.0)
}

/// Top-M mined proposals for every (image, class) pair with a nonempty pool.
pub fn mine(scores: &[ImageScores], cfg: &MiningConfig) -> Result<MinedSet> {
    cfg.validate()?;
    let mut out: MinedSet = BTreeMap::new();
    for s in scores {
        if s.boxes.is_empty() {
            continue;
        }
        for c in 0..s.num_classes() {
            let ranked = rank_class(s, c, cfg)?;
            out.insert((s.image_id.clone(), c), top_m_select(&ranked, cfg.top_m));
        }
    }
    Ok(out)
}
