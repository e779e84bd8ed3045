//! Class activation maps and their summed-area tables.

use crate::bbox::BoundingBox;
use crate::classifier::{ClassifierModel, FeatureMapStack};
use crate::error::{Error, Result};
use crate::image::Image;

/// `m_c(x, y) = sum_k w_k^c a_k(x, y)` with an `(W'+1) x (H'+1)` integral
/// table, accumulated in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub class: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    integral: Vec<f64>,
}

impl ActivationMap {
    pub fn new(class: usize, width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "map size mismatch");
        let stride = width + 1;
        let mut integral = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values[y * width + x];
                integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
            }
        }
        ActivationMap {
            class,
            width,
            height,
            values,
            integral,
        }
    }

    pub fn from_features(maps: &FeatureMapStack, weights: &[f64], class: usize) -> Self {
        let n = maps.width * maps.height;
        let mut values = vec![0.0; n];
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (v, a) in values.iter_mut().zip(maps.plane(k)) {
                *v += w * a;
            }
        }
        ActivationMap::new(class, maps.width, maps.height, values)
    }

    /// `H_c(x, y)`: sum of `m_c` over `x' < x, y' < y`.
    #[inline]
    pub fn integral_at(&self, x: usize, y: usize) -> f64 {
        self.integral[y * (self.width + 1) + x]
    }

    pub fn total(&self) -> f64 {
        self.integral_at(self.width, self.height)
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub fn class_activation_map(model: &ClassifierModel, image: &Image, class: usize) -> Result<ActivationMap> {
    let c = model.num_classes();
    if class >= c {
        return Err(Error::ClassOutOfRange {
            class,
            num_classes: c,
        });
    }
    let maps = model.feature_maps(image)?;
    let weights = model.class_weights()?;
    Ok(ActivationMap::from_features(&maps, &weights[class], class))
}

/// All class maps from a single forward pass.
pub fn class_activation_maps(model: &ClassifierModel, image: &Image) -> Result<Vec<ActivationMap>> {
    let maps = model.feature_maps(image)?;
    let weights = model.class_weights()?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(c, w)| ActivationMap::from_features(&maps, w, c))
        .collect())
}

/// Four-corner box sum over a box given in map coordinates.
pub fn box_response(map: &ActivationMap, b: &BoundingBox) -> f64 {
    let (x1, y1) = (b.x1 as usize, b.y1 as usize);
    let (x2, y2) = (
        (b.x2 as usize).min(map.width),
        (b.y2 as usize).min(map.height),
    );
    if x2 <= x1 || y2 <= y1 {
        return 0.0;
    }
    map.integral_at(x1, y1) + map.integral_at(x2, y2) - map.integral_at(x1, y2) - map.integral_at(x2, y1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub value: f64,
    /// The image box mapped to an empty map region.
    pub degenerate: bool,
}

/// Response of an image-space box on a `width x height` image.
pub fn image_box_response(map: &ActivationMap, b: &BoundingBox, width: u32, height: u32) -> Response {
    match b.to_grid(width, height, map.width, map.height) {
        Some(g) => Response {
            value: box_response(map, &g),
            degenerate: false,
        },
        None => Response {
            value: 0.0,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationScore {
    pub value: f64,
    /// The map sums to zero, so the size-prior term was taken as 0.
    pub zero_total: bool,
    pub degenerate: bool,
}

/// Mean response density plus `alpha` times the share of total map mass
/// inside the box. `w, h` are the box sides in image pixels.
pub fn activation_score(map: &ActivationMap, b: &BoundingBox, alpha: f64, width: u32, height: u32) -> ActivationScore {
    let r = image_box_response(map, b, width, height);
    let total = map.total();
    let density = r.value / b.area() as f64;
    let (prior, zero_total) = if total == 0.0 {
        (0.0, true)
    } else {
        (alpha * r.value / total, false)
    };
    ActivationScore {
        value: density + prior,
        zero_total,
        degenerate: r.degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{net, Architecture};

    #[test]
    fn integral_borders_are_zero() {
        let m = ActivationMap::new(0, 3, 2, vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        for x in 0..=3 {
            assert_eq!(m.integral_at(x, 0), 0.0);
        }
        for y in 0..=2 {
            assert_eq!(m.integral_at(0, y), 0.0);
        }
        assert_eq!(m.total(), 5.0);
    }

    #[test]
    fn ones_map_box_area() {
        let m = ActivationMap::new(0, 8, 8, vec![1.0; 64]);
        let b = BoundingBox::new(2, 3, 4, 6).unwrap();
        assert_eq!(box_response(&m, &b), 6.0);
        assert_eq!(box_response(&m, &BoundingBox::full(8, 8)), 64.0);
    }

    #[test]
    fn zero_weights_zero_map() {
        let mut model = ClassifierModel::init(Architecture::new(2), 4);
        model.params.blobs[net::FC_W][..32].fill(0.0);
        let img = Image::filled(64, 64, [0.4, 0.5, 0.6]);
        let m = class_activation_map(&model, &img, 0).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(class_activation_map(&model, &img, 2).is_err());
    }

    #[test]
    fn map_sum_equals_logit_minus_bias() {
        let mut model = ClassifierModel::init(Architecture::new(3), 5);
        model.params.blobs[net::FC_B] = vec![0.3, -0.2, 0.1];
        let mut img = Image::filled(64, 64, [0.7; 3]);
        img.fill_box(&BoundingBox::new(10, 12, 30, 40).unwrap(), [0.9, 0.1, 0.1]);
        let logits = model.logits(&img).unwrap();
        for c in 0..3 {
            let m = class_activation_map(&model, &img, c).unwrap();
            let area = (m.width * m.height) as f64;
            let lhs = m.values.iter().sum::<f64>() / area;
            let rhs = logits[c] - model.class_bias().unwrap()[c];
            assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1e-12), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn uniform_map_closed_form() {
        let m = ActivationMap::new(0, 16, 12, vec![1.0; 192]);
        let b = BoundingBox::new(3, 2, 10, 7).unwrap();
        let s = activation_score(&m, &b, 5.0, 16, 12);
        assert!((s.value - (1.0 + 5.0 * 35.0 / 192.0)).abs() < 1e-12);
        let s0 = activation_score(&m, &b, 0.0, 16, 12);
        assert!((s0.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_total_flagged() {
        let m = ActivationMap::new(0, 4, 4, vec![0.0; 16]);
        let s = activation_score(&m, &BoundingBox::new(0, 0, 2, 2).unwrap(), 5.0, 4, 4);
        assert!(s.zero_total);
        assert_eq!(s.value, 0.0);
    }
}
