//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's own solvers; `grad` only probes
//! library losses numerically.

#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsolkit::bbox::BoundingBox;
use wsolkit::image::Image;
use wsolkit::mil::{Bag, Instance, Polarity};

pub fn hinge(z: f64) -> f64 {
    if z <= 0.0 {
        0.5 - z
    } else if z < 1.0 {
        0.5 * (1.0 - z) * (1.0 - z)
    } else {
        0.0
    }
}

fn hinge_slope(z: f64) -> f64 {
    if z <= 0.0 {
        -1.0
    } else if z < 1.0 {
        z - 1.0
    } else {
        0.0
    }
}

/// `(x, y)` with `y = +-1`.
pub type Labelled = (Vec<f64>, f64);

pub fn svm_objective(data: &[Labelled], w: &[f64], b: f64, lambda: f64) -> f64 {
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
    let risk: f64 = data
        .iter()
        .map(|(x, y)| hinge(y * (x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b)))
        .sum();
    reg + risk / data.len() as f64
}

/// Nesterov-accelerated gradient descent with a fixed `1/L` step.
pub fn svm_minimize(data: &[Labelled], lambda: f64, iters: usize) -> f64 {
    let d = data[0].0.len();
    let n = data.len() as f64;
    let lip = lambda + data.iter().map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>() + 1.0).sum::<f64>() / n;
    let step = 1.0 / lip;
    let mut w = vec![0.0; d + 1];
    let mut prev = w.clone();
    for k in 0..iters {
        let beta = k as f64 / (k as f64 + 3.0);
        let v: Vec<f64> = w.iter().zip(&prev).map(|(a, p)| a + beta * (a - p)).collect();
        let mut g = vec![0.0; d + 1];
        for (i, gi) in g.iter_mut().enumerate().take(d) {
            *gi = lambda * v[i];
        }
        for (x, y) in data {
            let z = y * (x.iter().zip(&v).map(|(a, c)| a * c).sum::<f64>() + v[d]);
            let s = hinge_slope(z) * y / n;
            if s != 0.0 {
                for i in 0..d {
                    g[i] += s * x[i];
                }
                g[d] += s;
            }
        }
        prev = w;
        w = v.iter().zip(&g).map(|(a, gi)| a - step * gi).collect();
    }
    svm_objective(data, &w[..d], w[d], lambda)
}

/// Minimum objective over every one-per-bag choice of positives, with the
/// choice (index per positive bag) that attains it, and the objective of
/// every choice.
pub fn brute_force_mil(bags: &[Bag], lambda: f64, iters: usize) -> (f64, Vec<usize>, Vec<(Vec<usize>, f64)>) {
    let pos: Vec<&Bag> = bags.iter().filter(|b| b.polarity == Polarity::Positive).collect();
    let neg: Vec<Labelled> = bags
        .iter()
        .filter(|b| b.polarity == Polarity::Negative)
        .flat_map(|b| b.instances.iter().map(|i| (i.features.clone(), -1.0)))
        .collect();
    let mut all = Vec::new();
    let mut choice = vec![0usize; pos.len()];
    loop {
        let mut data: Vec<Labelled> = pos
            .iter()
            .zip(&choice)
            .map(|(b, &i)| (b.instances[i].features.clone(), 1.0))
            .collect();
        data.extend(neg.iter().cloned());
        all.push((choice.clone(), svm_minimize(&data, lambda, iters)));
        // odometer increment
        let mut k = 0;
        loop {
            if k == pos.len() {
                let best = all
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .cloned()
                    .unwrap();
                return (best.1, best.0, all);
            }
            choice[k] += 1;
            if choice[k] < pos[k].instances.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Small 2-D MIL problem: every positive bag hides one instance near
/// `(2, 2)` among distractors near the negatives around the origin.
pub fn random_mil_problem(seed: u64) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = BoundingBox::new(0, 0, 1, 1).unwrap();
    let mut bags = Vec::new();
    let n_pos = rng.gen_range(2..=3);
    for p in 0..n_pos {
        let n = rng.gen_range(1..=4);
        let hidden = rng.gen_range(0..n);
        let instances = (0..n)
            .map(|i| {
                let c = if i == hidden { 2.0 } else { 0.0 };
                Instance {
                    bbox,
                    features: vec![c + rng.gen_range(-0.6..0.6), c + rng.gen_range(-0.6..0.6)],
                    prior: rng.gen_range(0.0..1.0),
                }
            })
            .collect();
        bags.push(Bag {
            image_id: format!("p{p}"),
            class: 0,
            polarity: Polarity::Positive,
            instances,
        });
    }
    for q in 0..3 {
        let n = rng.gen_range(1..=4);
        let instances = (0..n)
            .map(|_| Instance {
                bbox,
                features: vec![rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)],
                prior: rng.gen_range(0.0..1.0),
            })
            .collect();
        bags.push(Bag {
            image_id: format!("n{q}"),
            class: 0,
            polarity: Polarity::Negative,
            instances,
        });
    }
    bags
}

/// Multiples of 1/8 in [-64, 64]: every partial sum of a few thousand of
/// them is exact in `f64`, so summation order cannot matter.
pub fn dyadic_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-512i32..=512) as f64 / 8.0).collect()
}

pub fn uniform_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Noisy background with a few solid rectangles.
pub fn blob_image(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(width, height, [0.8, 0.8, 0.8]);
    for y in 0..height {
        for x in 0..width {
            let n = rng.gen_range(-0.05..0.05f32);
            img.set(x, y, [0.8 + n, 0.8 - n, 0.8]);
        }
    }
    for _ in 0..rng.gen_range(1..4) {
        let x = rng.gen_range(0..width - 4);
        let y = rng.gen_range(0..height - 4);
        let b = BoundingBox::new(x, y, rng.gen_range(x + 2..=width), rng.gen_range(y + 2..=height)).unwrap();
        img.fill_box(&b, [rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5), rng.gen_range(0.0..1.0)]);
    }
    img
}

/// Optimal SVM objective when each positive bag contributes `picks[k]`.
pub fn selection_objective(bags: &[Bag], picks: &[usize], lambda: f64) -> f64 {
    let mut data: Vec<Labelled> = bags
        .iter()
        .filter(|b| b.polarity == Polarity::Positive)
        .zip(picks)
        .map(|(b, &i)| (b.instances[i].features.clone(), 1.0))
        .collect();
    for b in bags.iter().filter(|b| b.polarity == Polarity::Negative) {
        data.extend(b.instances.iter().map(|i| (i.features.clone(), -1.0)));
    }
    svm_minimize(&data, lambda, 20000)
}

fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)) as f64;
    let h = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)) as f64;
    let inter = w * h;
    let area = |r: &BoundingBox| ((r.x2 - r.x1) * (r.y2 - r.y1)) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Textbook O(n^2) greedy suppression: repeatedly take the best remaining
/// box (lowest index among equal scores) and delete everything it overlaps
/// by at least `thr`.
pub fn nms_reference(boxes: &[BoundingBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { return keep };
        keep.push(b);
        alive[b] = false;
        for i in 0..boxes.len() {
            if alive[i] && iou(&boxes[b], &boxes[i]) >= thr {
                alive[i] = false;
            }
        }
    }
}

/// All-points AP from ranked TP flags: sum over recall steps of the
/// maximum precision at that recall or beyond.
pub fn ap_reference(tp: &[bool], num_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        points.push((hits as f64 / (i + 1) as f64, hits as f64 / num_gt as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let r = points[i].1;
        if r > prev_recall {
            let p = points[i..].iter().map(|q| q.0).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}
