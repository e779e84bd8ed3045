//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsolkit::classifier::{expand_labels, loss_gradient, Architecture, ClassifierModel};
use wsolkit::detector::{detector_loss, DetectorModel, RoiSample};
use wsolkit::BoundingBox;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Small net: 8x8 input, 3 then 4 channels, 3 classes.
pub fn tiny_model(seed: u64) -> ClassifierModel {
    let arch = Architecture {
        input: 8,
        conv1: 3,
        k: 4,
        num_classes: 3,
    };
    let mut m = ClassifierModel::init(arch, seed);
    // move biases off zero so ReLU kinks are not sitting on the probes
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for i in 0..m.params.len() {
        let v = m.params.get_flat(i);
        m.params.set_flat(i, v + rng.gen_range(-0.05..0.05));
    }
    m
}

pub fn classifier_gradient_worst(seed: u64) -> f64 {
    let m = tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..3 * 64).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let ys = [expand_labels(&[1, 0, 1]), expand_labels(&[0, 1, 0]), expand_labels(&[1, 1, 0])];
    let batch: Vec<(&[f64], _)> = xs.iter().map(Vec::as_slice).zip(ys.iter()).collect();
    let (_, g) = loss_gradient(&m, &batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..m.params.len() {
        let mut p = m.clone();
        let v = p.params.get_flat(i);
        p.params.set_flat(i, v + h);
        let up = loss_gradient(&p, &batch).unwrap().0;
        p.params.set_flat(i, v - h);
        let down = loss_gradient(&p, &batch).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let an = g.get_flat(i);
        // both tiny: absolute agreement is what matters
        if fd.abs().max(an.abs()) < 1e-7 {
            continue;
        }
        worst = worst.max(rel_err(fd, an));
    }
    worst
}

pub fn scalar_gradient_worst(f: impl Fn(f64) -> (f64, f64), points: &[f64]) -> f64 {
    let h = 1e-6;
    points
        .iter()
        .map(|&z| {
            let fd = (f(z + h).0 - f(z - h).0) / (2.0 * h);
            rel_err(fd, f(z).1)
        })
        .fold(0.0, f64::max)
}

/// Probe points avoiding the kinks of both losses.
pub fn probe_points() -> Vec<f64> {
    (-40..=40).map(|i| i as f64 * 0.0737 + 0.013).collect()
}

pub fn detector_gradient_worst(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, d) = (2, 5);
    let mut m = DetectorModel::zeros(c, d);
    for v in m.cls_w.iter_mut().chain(m.reg_w.iter_mut()).chain(m.cls_b.iter_mut()).chain(m.reg_b.iter_mut()) {
        *v = rng.gen_range(-0.5..0.5);
    }
    let n = 8;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let bb = BoundingBox::new(0, 0, 10, 10).unwrap();
    let samples: Vec<RoiSample> = (0..n)
        .map(|i| {
            let label = i % (c + 1);
            RoiSample {
                image_id: format!("i{i}"),
                bbox: bb,
                label,
                target: (label > 0).then(|| [0.0; 4].map(|_: f64| rng.gen_range(-2.0..2.0))),
            }
        })
        .collect();
    let batch: Vec<usize> = (0..n).collect();
    let (_, g) = detector_loss(&m, &x, &samples, &batch, 1.0);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for blob in 0..4 {
        for i in 0..g[blob].len() {
            let eval = |delta: f64| {
                let mut p = m.clone();
                let slot = match blob {
                    0 => &mut p.cls_w[i],
                    1 => &mut p.cls_b[i],
                    2 => &mut p.reg_w[i],
                    _ => &mut p.reg_b[i],
                };
                *slot += delta;
                detector_loss(&p, &x, &samples, &batch, 1.0).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if fd.abs().max(g[blob][i].abs()) < 1e-7 {
                continue;
            }
            worst = worst.max(rel_err(fd, g[blob][i]));
        }
    }
    worst
}

