//! Labelled images, manifests, proposal files and dataset statistics.

mod manifest;
mod proposals;
mod synthetic;

pub use manifest::{load_manifest, save_manifest, ImageFormat, LoadReport};
pub use proposals::{
    generate_proposals, generate_proposal_set, load_proposals, save_proposals, Proposal,
    ProposalConfig, ProposalSet,
};
pub use synthetic::{generate_synthetic, ClassStyle, Shape, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtBox {
    pub class: usize,
    pub bbox: BoundingBox,
}

/// An image with its image-level label vector. Ground-truth boxes are kept
/// for evaluation only; training stages read `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
    pub labels: Vec<u8>,
    pub gt: Vec<GtBox>,
}

impl LabeledImage {
    pub fn has_class(&self, class: usize) -> bool {
        self.labels.get(class).copied() == Some(1)
    }

    pub fn gt_of(&self, class: usize) -> impl Iterator<Item = &BoundingBox> {
        self.gt.iter().filter(move |g| g.class == class).map(|g| &g.bbox)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Indices of images whose label vector marks `class` present.
    pub fn positives(&self, class: usize) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.images[i].has_class(class))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for img in &self.images {
            if img.labels.len() != self.num_classes {
                return Err(Error::Dimension {
                    expected: self.num_classes,
                    got: img.labels.len(),
                });
            }
            if img.labels.iter().any(|&l| l > 1) {
                return Err(Error::Format(format!("{}: labels must be 0/1", img.id)));
            }
            for g in &img.gt {
                if g.class >= self.num_classes {
                    return Err(Error::ClassOutOfRange {
                        class: g.class,
                        num_classes: self.num_classes,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-channel mean over every pixel of every image.
pub fn mean_pixel(dataset: &Dataset) -> Result<[f64; 3]> {
    let mut sums = [0.0f64; 3];
    let mut count = 0u64;
    for img in &dataset.images {
        let s = img.image.channel_sums();
        for c in 0..3 {
            sums[c] += s[c];
        }
        count += img.image.width() as u64 * img.image.height() as u64;
    }
    if count == 0 {
        return Err(Error::Empty("mean pixel of an empty dataset".into()));
    }
    Ok(sums.map(|s| s / count as f64))
}

/// Stable 64-bit FNV-1a hash, used to derive per-image seeds from ids.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(id: &str, w: u32, h: u32, v: f32) -> LabeledImage {
        LabeledImage {
            id: id.into(),
            image: Image::filled(w, h, [v; 3]),
            labels: vec![0, 0],
            gt: vec![],
        }
    }

    #[test]
    fn mean_pixel_cases() {
        let black = Dataset {
            num_classes: 2,
            images: vec![single("a", 4, 4, 0.0)],
        };
        assert_eq!(mean_pixel(&black).unwrap(), [0.0; 3]);

        let half = Dataset {
            num_classes: 2,
            images: vec![single("a", 3, 5, 0.5)],
        };
        assert_eq!(mean_pixel(&half).unwrap(), [0.5; 3]);

        let two = Dataset {
            num_classes: 2,
            images: vec![single("a", 6, 6, 0.0), single("b", 6, 6, 1.0)],
        };
        // direct pixel-sum oracle
        let mut oracle = [0.0f64; 3];
        let mut n = 0.0;
        for img in &two.images {
            for y in 0..img.image.height() {
                for x in 0..img.image.width() {
                    let p = img.image.get(x, y);
                    for c in 0..3 {
                        oracle[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
        }
        let m = mean_pixel(&two).unwrap();
        for c in 0..3 {
            assert_eq!(m[c], oracle[c] / n);
            assert_eq!(m[c], 0.5);
        }
    }

    #[test]
    fn mean_pixel_empty_is_error() {
        let empty = Dataset {
            num_classes: 2,
            images: vec![],
        };
        assert!(mean_pixel(&empty).is_err());
    }
}
