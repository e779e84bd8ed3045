use crate::error::{Error, Result};

/// Probability floor applied before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// `2C`-dimensional target: entry `2c` is 1 when class `c` is present,
/// entry `2c + 1` when it is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedLabel(pub Vec<u8>);

impl ExpandedLabel {
    pub fn num_classes(&self) -> usize {
        self.0.len() / 2
    }

    pub fn present(&self, class: usize) -> bool {
        self.0[2 * class] == 1
    }
}

pub fn expand_labels(y: &[u8]) -> ExpandedLabel {
    let mut t = Vec::with_capacity(2 * y.len());
    for &yc in y {
        let present = u8::from(yc == 1);
        t.push(present);
        t.push(1 - present);
    }
    ExpandedLabel(t)
}

/// `2C` probabilities built from one sigmoid per class and its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(pub Vec<f64>);

impl ProbabilityVector {
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut p = Vec::with_capacity(2 * logits.len());
        for &z in logits {
            let s = sigmoid(z);
            p.push(s);
            p.push(1.0 - s);
        }
        ProbabilityVector(p)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len() / 2
    }

    /// Probability that class `c` is present.
    #[inline]
    pub fn present(&self, class: usize) -> f64 {
        self.0[2 * class]
    }

    #[inline]
    pub fn absent(&self, class: usize) -> f64 {
        self.0[2 * class + 1]
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Negative log-likelihood summed over classes for one image.
pub fn multilabel_loss(p: &ProbabilityVector, t: &ExpandedLabel) -> Result<f64> {
    if p.0.len() != t.0.len() {
        return Err(Error::Dimension {
            expected: t.0.len(),
            got: p.0.len(),
        });
    }
    Ok(p.0
        .iter()
        .zip(&t.0)
        .filter(|(_, &ti)| ti == 1)
        .map(|(&pi, _)| -pi.clamp(PROB_EPS, 1.0).ln())
        .sum())
}

/// Sum of per-image losses over a batch.
pub fn batch_loss(pairs: &[(ProbabilityVector, ExpandedLabel)]) -> Result<f64> {
    pairs.iter().map(|(p, t)| multilabel_loss(p, t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_examples() {
        assert_eq!(expand_labels(&[1, 0]).0, vec![1, 0, 0, 1]);
        assert_eq!(expand_labels(&[0, 0, 0]).0, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(expand_labels(&[1, 1, 1]).0, vec![1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn half_probabilities_give_c_ln2() {
        for c in 1..6 {
            let p = ProbabilityVector::from_logits(&vec![0.0; c]);
            let y: Vec<u8> = (0..c).map(|i| (i % 2) as u8).collect();
            let l = multilabel_loss(&p, &expand_labels(&y)).unwrap();
            assert!((l - c as f64 * std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_loss() {
        let p = ProbabilityVector(vec![0.9, 0.1, 0.2, 0.8]);
        let l = multilabel_loss(&p, &expand_labels(&[1, 0])).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln());
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3285).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_limit() {
        let p = ProbabilityVector::from_logits(&[40.0, -40.0]);
        let l = multilabel_loss(&p, &expand_labels(&[1, 0])).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn mismatch_is_error() {
        let p = ProbabilityVector::from_logits(&[0.0]);
        assert!(multilabel_loss(&p, &expand_labels(&[1, 0])).is_err());
    }

    #[test]
    fn complement_exact() {
        let p = ProbabilityVector::from_logits(&[-30.0, -2.5, 0.0, 1e-3, 7.0, 35.0]);
        for c in 0..p.num_classes() {
            assert!((p.present(c) + p.absent(c) - 1.0).abs() <= 1e-12);
        }
    }
}
