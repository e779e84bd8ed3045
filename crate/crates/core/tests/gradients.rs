//! Analytic gradients against central finite differences.

mod common;

use common::grad::*;
use wsolkit::detector::smooth_l1;
use wsolkit::mil::smoothed_hinge;

const REL: f64 = 1e-4;

#[test]
fn classifier_loss_gradient() {
    for seed in 0..3 {
        let w = classifier_gradient_worst(seed);
        assert!(w <= REL, "seed {seed}: worst relative error {w:e}");
    }
}

#[test]
fn smoothed_hinge_gradient() {
    let w = scalar_gradient_worst(smoothed_hinge, &probe_points());
    assert!(w <= REL, "{w:e}");
}

#[test]
fn smooth_l1_gradient() {
    let w = scalar_gradient_worst(smooth_l1, &probe_points());
    assert!(w <= REL, "{w:e}");
}

#[test]
fn detector_loss_gradient() {
    for seed in 0..3 {
        let w = detector_gradient_worst(seed);
        assert!(w <= REL, "seed {seed}: {w:e}");
    }
}
