//! Fixed small convnet: conv3x3 + ReLU, 2x2 max-pool, conv3x3 + ReLU, global
//! average pooling, linear. Convolutions are lowered to GEMM via im2col.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Side of the square network input.
    pub input: usize,
    pub conv1: usize,
    /// Channels of the last conv layer (the `K` feature maps).
    pub k: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(num_classes: usize) -> Self {
        Architecture {
            input: 64,
            conv1: 16,
            k: 32,
            num_classes,
        }
    }

    /// Side of the last-conv feature maps.
    pub fn map_side(&self) -> usize {
        self.input / 2
    }

    pub fn blob_sizes(&self) -> [usize; 6] {
        [
            self.conv1 * 3 * 9,
            self.conv1,
            self.k * self.conv1 * 9,
            self.k,
            self.num_classes * self.k,
            self.num_classes,
        ]
    }
}

/// Parameter blobs in declaration order: conv1 weights, conv1 bias, conv2
/// weights, conv2 bias, class weights (`C x K`), class bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub blobs: [Vec<f64>; 6],
}

pub const CONV1_W: usize = 0;
pub const CONV1_B: usize = 1;
pub const CONV2_W: usize = 2;
pub const CONV2_B: usize = 3;
pub const FC_W: usize = 4;
pub const FC_B: usize = 5;

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        Params {
            blobs: arch.blob_sizes().map(|n| vec![0.0; n]),
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.blobs
            .iter()
            .zip(arch.blob_sizes())
            .all(|(b, n)| b.len() == n)
    }

    pub fn len(&self) -> usize {
        self.blobs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (dst, src) in self.blobs.iter_mut().zip(&other.blobs) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blobs.iter_mut() {
            for v in b.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blobs.iter().flat_map(|b| b.iter())
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for b in &self.blobs {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for b in self.blobs.iter_mut() {
            if i < b.len() {
                b[i] = v;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Rounds every parameter to the nearest `f32`, so checkpoints are exact.
    pub fn round_to_f32(&mut self) {
        for b in self.blobs.iter_mut() {
            for v in b.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
pub struct Trace {
    col1: Vec<f64>,
    h1: Vec<f64>,
    argmax: Vec<u32>,
    col2: Vec<f64>,
    /// Last-conv activations, `K x side x side`, post-ReLU.
    pub maps: Vec<f64>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every caller passes buffers sized for the given shapes/strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3x3 same-padding patches: row `(ci*9 + ky*3 + kx)`, column `y*side + x`.
fn im2col(input: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let plane = side * side;
    let mut col = vec![0.0; channels * 9 * plane];
    for ci in 0..channels {
        let src = &input[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * side..][..side];
                    let drow = &mut row[y * side..][..side];
                    let (x0, x1) = match kx {
                        0 => (1, side),
                        1 => (0, side),
                        _ => (0, side - 1),
                    };
                    for x in x0..x1 {
                        drow[x] = srow[x + kx - 1];
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], channels: usize, side: usize) -> Vec<f64> {
    let plane = side * side;
    let mut out = vec![0.0; channels * plane];
    for ci in 0..channels {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..side {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    let srow = &row[y * side..][..side];
                    let drow = &mut dst[sy as usize * side..][..side];
                    let (x0, x1) = match kx {
                        0 => (1, side),
                        1 => (0, side),
                        _ => (0, side - 1),
                    };
                    for x in x0..x1 {
                        drow[x + kx - 1] += srow[x];
                    }
                }
            }
        }
    }
    out
}

fn add_bias_relu(out: &mut [f64], bias: &[f64], plane: usize) {
    for (ch, b) in bias.iter().enumerate() {
        for v in &mut out[ch * plane..(ch + 1) * plane] {
            *v = (*v + b).max(0.0);
        }
    }
}

/// Runs the network on a planar `3 x input x input` tensor.
pub fn forward(arch: &Architecture, p: &Params, x: &[f64]) -> Trace {
    let s1 = arch.input;
    let p1 = s1 * s1;
    let s2 = arch.map_side();
    let p2 = s2 * s2;
    let (c1, k) = (arch.conv1, arch.k);

    let col1 = im2col(x, 3, s1);
    let mut h1 = vec![0.0; c1 * p1];
    gemm(c1, 27, p1, &p.blobs[CONV1_W], 27, 1, &col1, p1 as isize, 1, 0.0, &mut h1);
    add_bias_relu(&mut h1, &p.blobs[CONV1_B], p1);

    let mut pooled1 = vec![0.0; c1 * p2];
    let mut argmax = vec![0u32; c1 * p2];
    for ch in 0..c1 {
        let src = &h1[ch * p1..(ch + 1) * p1];
        for y in 0..s2 {
            for x in 0..s2 {
                let base = 2 * y * s1 + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + s1, base + s1 + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                pooled1[ch * p2 + y * s2 + x] = src[best];
                argmax[ch * p2 + y * s2 + x] = best as u32;
            }
        }
    }

    let col2 = im2col(&pooled1, c1, s2);
    let mut maps = vec![0.0; k * p2];
    gemm(k, c1 * 9, p2, &p.blobs[CONV2_W], (c1 * 9) as isize, 1, &col2, p2 as isize, 1, 0.0, &mut maps);
    add_bias_relu(&mut maps, &p.blobs[CONV2_B], p2);

    let pooled: Vec<f64> = maps
        .chunks_exact(p2)
        .map(|m| m.iter().sum::<f64>() / p2 as f64)
        .collect();
    let fc_w = &p.blobs[FC_W];
    let logits = (0..arch.num_classes)
        .map(|c| {
            let row = &fc_w[c * k..(c + 1) * k];
            row.iter().zip(&pooled).map(|(w, g)| w * g).sum::<f64>() + p.blobs[FC_B][c]
        })
        .collect();

    Trace {
        col1,
        h1,
        argmax,
        col2,
        maps,
        pooled,
        logits,
    }
}

/// Accumulates parameter gradients into `grad` given `dL/dlogits`.
pub fn backward(arch: &Architecture, p: &Params, trace: &Trace, dlogits: &[f64], grad: &mut Params) {
    let s1 = arch.input;
    let p1 = s1 * s1;
    let s2 = arch.map_side();
    let p2 = s2 * s2;
    let (c1, k) = (arch.conv1, arch.k);

    let mut dpooled = vec![0.0; k];
    for (c, &dz) in dlogits.iter().enumerate() {
        grad.blobs[FC_B][c] += dz;
        let wrow = &p.blobs[FC_W][c * k..(c + 1) * k];
        let grow = &mut grad.blobs[FC_W][c * k..(c + 1) * k];
        for j in 0..k {
            grow[j] += dz * trace.pooled[j];
            dpooled[j] += dz * wrow[j];
        }
    }

    // dL/d(pre-ReLU conv2): spread the pooled gradient uniformly over the map.
    let mut dpre2 = vec![0.0; k * p2];
    for j in 0..k {
        let g = dpooled[j] / p2 as f64;
        let mut bsum = 0.0;
        for i in 0..p2 {
            if trace.maps[j * p2 + i] > 0.0 {
                dpre2[j * p2 + i] = g;
                bsum += g;
            }
        }
        grad.blobs[CONV2_B][j] += bsum;
    }
    let kc = c1 * 9;
    gemm(k, p2, kc, &dpre2, p2 as isize, 1, &trace.col2, 1, p2 as isize, 1.0, &mut grad.blobs[CONV2_W]);

    let mut dcol2 = vec![0.0; kc * p2];
    gemm(kc, k, p2, &p.blobs[CONV2_W], 1, kc as isize, &dpre2, p2 as isize, 1, 0.0, &mut dcol2);
    let dpool1 = col2im(&dcol2, c1, s2);

    let mut dpre1 = vec![0.0; c1 * p1];
    for ch in 0..c1 {
        let mut bsum = 0.0;
        for i in 0..p2 {
            let src = trace.argmax[ch * p2 + i] as usize;
            let d = dpool1[ch * p2 + i];
            if trace.h1[ch * p1 + src] > 0.0 {
                dpre1[ch * p1 + src] += d;
                bsum += d;
            }
        }
        grad.blobs[CONV1_B][ch] += bsum;
    }
    gemm(c1, p1, 27, &dpre1, p1 as isize, 1, &trace.col1, 1, p1 as isize, 1.0, &mut grad.blobs[CONV1_W]);
}
