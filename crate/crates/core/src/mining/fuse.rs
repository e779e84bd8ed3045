use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredProposal {
    /// Position of the box in the image's proposal list.
    pub index: usize,
    pub bbox: BoundingBox,
    pub class: usize,
    pub raw_contrast: f64,
    pub raw_activation: f64,
    /// Min-max normalized contrast in `[0, 1]`.
    pub contrast: f64,
    /// Min-max normalized activation in `[0, 1]`.
    pub activation: f64,
    pub fused: f64,
}

impl ScoredProposal {
    pub fn raw(index: usize, bbox: BoundingBox, class: usize, contrast: f64, activation: f64) -> Self {
        ScoredProposal {
            index,
            bbox,
            class,
            raw_contrast: contrast,
            raw_activation: activation,
            contrast: 0.0,
            activation: 0.0,
            fused: 0.0,
        }
    }
}

/// Relative weights of the two normalized channels in the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub contrast: f64,
    pub activation: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            contrast: 10.0,
            activation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseFlags {
    /// Every raw contrast was equal; the channel was set to 0.5.
    pub contrast_degenerate: bool,
    pub activation_degenerate: bool,
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Output order: fused descending, then normalized contrast descending, then
/// lower proposal index.
pub fn ranking_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.fused
        .total_cmp(&a.fused)
        .then(b.contrast.total_cmp(&a.contrast))
        .then(a.index.cmp(&b.index))
}

/// Normalizes both channels of one image/class pool to `[0, 1]`, fuses them
/// with `weights` and returns the pool in ranking order.
pub fn normalize_and_fuse(
    mut pool: Vec<ScoredProposal>,
    weights: FusionWeights,
) -> Result<(Vec<ScoredProposal>, FuseFlags)> {
    if pool.is_empty() {
        return Err(Error::Empty("proposal pool".into()));
    }
    let total = weights.contrast + weights.activation;
    if !(total > 0.0) || weights.contrast < 0.0 || weights.activation < 0.0 {
        return Err(Error::Config("fusion weights must be non-negative with a positive sum".into()));
    }
    let (c_lo, c_hi) = min_max(pool.iter().map(|p| p.raw_contrast));
    let (a_lo, a_hi) = min_max(pool.iter().map(|p| p.raw_activation));
    let flags = FuseFlags {
        contrast_degenerate: c_hi <= c_lo,
        activation_degenerate: a_hi <= a_lo,
    };
    for p in pool.iter_mut() {
        p.contrast = if flags.contrast_degenerate {
            0.5
        } else {
            (p.raw_contrast - c_lo) / (c_hi - c_lo)
        };
        p.activation = if flags.activation_degenerate {
            0.5
        } else {
            (p.raw_activation - a_lo) / (a_hi - a_lo)
        };
        p.fused = (weights.contrast * p.contrast + weights.activation * p.activation) / total;
    }
    pool.sort_by(ranking_order);
    Ok((pool, flags))
}

/// The first `m` entries of a ranked pool.
pub fn top_m_select(ranked: &[ScoredProposal], m: usize) -> Vec<ScoredProposal> {
    ranked[..m.min(ranked.len())].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(i: u32) -> BoundingBox {
        BoundingBox::new(i, i, i + 4, i + 4).unwrap()
    }

    #[test]
    fn min_max_two_values() {
        let pool = vec![
            ScoredProposal::raw(0, bx(0), 0, 0.2, 1.0),
            ScoredProposal::raw(1, bx(1), 0, 0.8, 3.0),
        ];
        let (out, flags) = normalize_and_fuse(pool, FusionWeights::default()).unwrap();
        assert_eq!(flags, FuseFlags::default());
        assert_eq!(out[0].index, 1);
        assert_eq!((out[0].contrast, out[1].contrast), (1.0, 0.0));
        assert_eq!(out[0].fused, 1.0);
    }

    #[test]
    fn ten_to_one_weighting() {
        let pool = vec![
            ScoredProposal::raw(0, bx(0), 0, 1.0, 0.0),
            ScoredProposal::raw(1, bx(1), 0, 0.0, 1.0),
        ];
        let (out, _) = normalize_and_fuse(pool, FusionWeights::default()).unwrap();
        assert_eq!(out[0].index, 0);
        assert!((out[0].fused - 10.0 / 11.0).abs() < 1e-15);
        assert!((out[1].fused - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_channel_half() {
        let pool = vec![
            ScoredProposal::raw(0, bx(0), 0, 0.3, 1.0),
            ScoredProposal::raw(1, bx(1), 0, 0.3, 2.0),
        ];
        let (out, flags) = normalize_and_fuse(pool, FusionWeights::default()).unwrap();
        assert!(flags.contrast_degenerate && !flags.activation_degenerate);
        assert!(out.iter().all(|p| p.contrast == 0.5));
    }

    #[test]
    fn ties_by_contrast_then_index() {
        let pool = vec![
            ScoredProposal::raw(2, bx(2), 0, 0.5, 0.5),
            ScoredProposal::raw(0, bx(0), 0, 0.5, 0.5),
            ScoredProposal::raw(1, bx(1), 0, 0.0, 0.0),
            ScoredProposal::raw(3, bx(3), 0, 1.0, 1.0),
        ];
        let (out, _) = normalize_and_fuse(pool, FusionWeights::default()).unwrap();
        let order: Vec<usize> = out.iter().map(|p| p.index).collect();
        assert_eq!(order, vec![3, 0, 2, 1]);
    }

    #[test]
    fn top_m_small_pool_and_argmax() {
        let pool: Vec<_> = (0..10).map(|i| ScoredProposal::raw(i, bx(i as u32), 0, i as f64, 0.0)).collect();
        let (ranked, _) = normalize_and_fuse(pool, FusionWeights::default()).unwrap();
        assert_eq!(top_m_select(&ranked, 50).len(), 10);
        let one = top_m_select(&ranked, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].index, 9);
    }

    #[test]
    fn empty_pool_error() {
        assert!(normalize_and_fuse(vec![], FusionWeights::default()).is_err());
    }
}
