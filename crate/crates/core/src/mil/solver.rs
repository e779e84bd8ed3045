use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dot, smoothed_hinge};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Full-batch descent steps after SGD.
    pub polish_steps: usize,
    /// Polishing stops once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 1e-3,
            epochs: 20,
            learning_rate: 0.05,
            seed: 0,
            polish_steps: 2000,
            tolerance: 1e-10,
        }
    }
}

/// `lambda/2 |w|^2 + mean smoothed hinge`, positives labelled +1 and
/// negatives -1.
pub fn objective(pos: &[&[f64]], neg: &[&[f64]], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = (pos.len() + neg.len()) as f64;
    let risk: f64 = pos.iter().map(|x| smoothed_hinge(dot(w, x) + b).0).sum::<f64>()
        + neg.iter().map(|x| smoothed_hinge(-(dot(w, x) + b)).0).sum::<f64>();
    0.5 * lambda * dot(w, w) + risk / n
}

fn gradient(pos: &[&[f64]], neg: &[&[f64]], w: &[f64], b: f64, lambda: f64) -> (Vec<f64>, f64) {
    let n = (pos.len() + neg.len()) as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    let mut gb = 0.0;
    for (xs, y) in [(pos, 1.0), (neg, -1.0)] {
        for x in xs.iter() {
            let d = smoothed_hinge(y * (dot(w, x) + b)).1;
            if d != 0.0 {
                let s = d * y / n;
                for (g, xi) in gw.iter_mut().zip(x.iter()) {
                    *g += s * xi;
                }
                gb += s;
            }
        }
    }
    (gw, gb)
}

/// Minimizes [`objective`] starting from `(w, b)`: shuffled SGD epochs, then
/// full-batch gradient descent with Barzilai-Borwein steps and Armijo
/// backtracking. The result never has a higher objective than the start.
pub fn fit(pos: &[&[f64]], neg: &[&[f64]], w: &mut Vec<f64>, b: &mut f64, cfg: &FitConfig) {
    let start_w = w.clone();
    let start_b = *b;
    let start = objective(pos, neg, w, *b, cfg.lambda);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut items: Vec<(&[f64], f64)> = pos.iter().map(|x| (*x, 1.0)).chain(neg.iter().map(|x| (*x, -1.0))).collect();
    for epoch in 0..cfg.epochs {
        items.shuffle(&mut rng);
        let lr = cfg.learning_rate / (1.0 + epoch as f64);
        for (x, y) in &items {
            let d = smoothed_hinge(y * (dot(w, x) + *b)).1;
            for (wi, xi) in w.iter_mut().zip(x.iter()) {
                *wi -= lr * (cfg.lambda * *wi + d * y * xi);
            }
            *b -= lr * d * y;
        }
    }
    if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
        w.clone_from(&start_w);
        *b = start_b;
    }

    let mut f = objective(pos, neg, w, *b, cfg.lambda);
    let (mut gw, mut gb) = gradient(pos, neg, w, *b, cfg.lambda);
    let mut step = 1.0;
    for _ in 0..cfg.polish_steps {
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < cfg.tolerance {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - t * g).collect();
            let nb = *b - t * gb;
            let nf = objective(pos, neg, &nw, nb, cfg.lambda);
            if nf <= f - 1e-4 * t * gnorm2 {
                accepted = Some((nw, nb, nf));
                break;
            }
            t *= 0.5;
        }
        let Some((nw, nb, nf)) = accepted else { break };
        let (ngw, ngb) = gradient(pos, neg, &nw, nb, cfg.lambda);
        // Barzilai-Borwein guess for the next step
        let sy: f64 = nw.iter().zip(w.iter()).zip(ngw.iter().zip(&gw)).map(|((a, c), (g1, g0))| (a - c) * (g1 - g0)).sum::<f64>()
            + (nb - *b) * (ngb - gb);
        let ss: f64 = nw.iter().zip(w.iter()).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() + (nb - *b) * (nb - *b);
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e8) } else { t * 2.0 };
        *w = nw;
        *b = nb;
        gw = ngw;
        gb = ngb;
        f = nf;
    }
    if f > start {
        *w = start_w;
        *b = start_b;
    }
}
