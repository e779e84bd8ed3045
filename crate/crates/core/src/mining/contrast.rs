//! Mask-out images and classification-contrast scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::classifier::{ClassifierModel, ProbabilityVector};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MaskOutStrategy {
    /// `p(region) - p(mask-out image)`.
    #[default]
    #[serde(rename = "in-out")]
    InOut,
    /// `p(whole image) - p(mask-out image)`.
    #[serde(rename = "whole-out")]
    WholeOut,
    /// `p(region)`.
    #[serde(rename = "in")]
    In,
}

impl MaskOutStrategy {
    pub const ALL: [MaskOutStrategy; 3] = [MaskOutStrategy::InOut, MaskOutStrategy::WholeOut, MaskOutStrategy::In];

    pub fn name(self) -> &'static str {
        match self {
            MaskOutStrategy::InOut => "in-out",
            MaskOutStrategy::WholeOut => "whole-out",
            MaskOutStrategy::In => "in",
        }
    }
}

impl fmt::Display for MaskOutStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskOutStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-out" | "inout" => Ok(MaskOutStrategy::InOut),
            "whole-out" | "wholeout" => Ok(MaskOutStrategy::WholeOut),
            "in" => Ok(MaskOutStrategy::In),
            other => Err(Error::Config(format!("unknown mask-out strategy `{other}`"))),
        }
    }
}

/// Copy of `image` with every pixel inside `b` replaced by `mean`.
pub fn mask_out(image: &Image, b: &BoundingBox, mean: [f64; 3]) -> Result<Image> {
    if !b.fits_in(image.width(), image.height()) {
        return Err(Error::InvalidBox(format!(
            "{b} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let mut out = image.clone();
    out.fill_box(b, mean.map(|v| v as f32));
    Ok(out)
}

/// Region image for a box; the classifier resamples it to its input size.
pub fn region_image(image: &Image, b: &BoundingBox) -> Result<Image> {
    if b.width() < 2 || b.height() < 2 {
        return Err(Error::InvalidBox(format!("{b} is smaller than 2x2")));
    }
    image.crop(b)
}

/// Contrast scores of one box for every class from at most two forward
/// passes. `whole` is the prediction on the full image, needed only for
/// [`MaskOutStrategy::WholeOut`].
pub fn contrast_scores(
    model: &ClassifierModel,
    image: &Image,
    b: &BoundingBox,
    strategy: MaskOutStrategy,
    mean: [f64; 3],
    whole: Option<&ProbabilityVector>,
) -> Result<Vec<f64>> {
    let c = model.num_classes();
    let p_in = match strategy {
        MaskOutStrategy::InOut | MaskOutStrategy::In => Some(model.predict(&region_image(image, b)?)?),
        MaskOutStrategy::WholeOut => None,
    };
    let p_out = match strategy {
        MaskOutStrategy::InOut | MaskOutStrategy::WholeOut => Some(model.predict(&mask_out(image, b, mean)?)?),
        MaskOutStrategy::In => None,
    };
    let computed;
    let whole = match (strategy, whole) {
        (MaskOutStrategy::WholeOut, Some(w)) => Some(w),
        (MaskOutStrategy::WholeOut, None) => {
            computed = model.predict(image)?;
            Some(&computed)
        }
        _ => None,
    };
    Ok((0..c)
        .map(|k| match strategy {
            MaskOutStrategy::InOut => p_in.as_ref().unwrap().present(k) - p_out.as_ref().unwrap().present(k),
            MaskOutStrategy::WholeOut => whole.unwrap().present(k) - p_out.as_ref().unwrap().present(k),
            MaskOutStrategy::In => p_in.as_ref().unwrap().present(k),
        })
        .collect())
}

/// Contrast score of box `b` for class `class`.
pub fn contrast_score(
    model: &ClassifierModel,
    image: &Image,
    b: &BoundingBox,
    class: usize,
    strategy: MaskOutStrategy,
    mean: [f64; 3],
) -> Result<f64> {
    let c = model.num_classes();
    if class >= c {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: c,
        });
    }
    Ok(contrast_scores(model, image, b, strategy, mean, None)?[class])
}
