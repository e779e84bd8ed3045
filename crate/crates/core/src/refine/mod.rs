//! Box refinement: segment the object inside a selected box and replace the
//! box with the tightest one around the foreground segment.

mod io;

pub use io::{load_refined, save_refined};

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

/// Binary foreground mask at image resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
    /// Box the segmentation started from.
    pub source: BoundingBox,
    /// Segmentation failed and the mask is the source box interior.
    pub fallback: bool,
}

impl SegmentMask {
    pub fn empty(width: u32, height: u32, source: BoundingBox) -> Self {
        SegmentMask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
            source,
            fallback: false,
        }
    }

    /// All-interior mask of `b`, flagged as a fallback.
    pub fn from_box(width: u32, height: u32, b: BoundingBox) -> Self {
        let mut m = SegmentMask::empty(width, height, b);
        for y in b.y1..b.y2 {
            for x in b.x1..b.x2 {
                m.set(x, y, true);
            }
        }
        m.fallback = true;
        m
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Grayscale PNG, 255 for foreground.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::L8)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Fraction of the box extent added on every side for background
    /// statistics.
    pub expansion: f64,
    pub max_iterations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            expansion: 0.25,
            max_iterations: 20,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.expansion >= 0.0) || !self.expansion.is_finite() {
            return Err(Error::Config("refine expansion must be non-negative".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("refine max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that turns (image, box) into a foreground mask.
pub trait Segmenter: Sync {
    fn segment(&self, image: &Image, b: &BoundingBox) -> Result<SegmentMask>;
}

/// Two-mean RGB alternation, see [`segment_box`].
#[derive(Debug, Clone, Default)]
pub struct TwoMeans(pub RefineConfig);

impl Segmenter for TwoMeans {
    fn segment(&self, image: &Image, b: &BoundingBox) -> Result<SegmentMask> {
        segment_box(image, b, &self.0)
    }
}

fn dist2(p: [f32; 3], m: [f64; 3]) -> f64 {
    (0..3).map(|i| (p[i] as f64 - m[i]).powi(2)).sum()
}

fn mean_of(image: &Image, pixels: impl Iterator<Item = (u32, u32)>) -> Option<[f64; 3]> {
    let mut s = [0.0; 3];
    let mut n = 0usize;
    for (x, y) in pixels {
        let p = image.get(x, y);
        for i in 0..3 {
            s[i] += p[i] as f64;
        }
        n += 1;
    }
    (n > 0).then(|| s.map(|v| v / n as f64))
}

fn pixels(b: BoundingBox) -> impl Iterator<Item = (u32, u32)> {
    (b.y1..b.y2).flat_map(move |y| (b.x1..b.x2).map(move |x| (x, y)))
}

/// Foreground model from the box interior, background model from the ring
/// between the box and its expansion (the box's own one-pixel frame when the
/// ring is empty). Pixels go to the nearer mean (ties to background) until
/// nothing changes. The foreground is the largest 4-connected component
/// that touches the box; with none, the box interior is returned flagged.
pub fn segment_box(image: &Image, b: &BoundingBox, cfg: &RefineConfig) -> Result<SegmentMask> {
    let (w, h) = (image.width(), image.height());
    if !b.fits_in(w, h) {
        return Err(Error::InvalidBox(format!("{b} outside {w}x{h} image")));
    }
    let region = b.expanded(cfg.expansion, w, h);
    let ring = pixels(region).filter(|&(x, y)| !b.contains(x, y));
    let bg0 = match mean_of(image, ring) {
        Some(m) => m,
        None => {
            let frame = pixels(*b).filter(|&(x, y)| x == b.x1 || y == b.y1 || x + 1 == b.x2 || y + 1 == b.y2);
            mean_of(image, frame).expect("nonempty box has a frame")
        }
    };
    let mut fg = mean_of(image, pixels(*b)).expect("nonempty box");
    let mut bg = bg0;

    let rw = region.width() as usize;
    let idx = |x: u32, y: u32| (y - region.y1) as usize * rw + (x - region.x1) as usize;
    let mut assign = vec![false; rw * region.height() as usize];
    for it in 0..cfg.max_iterations {
        let mut changed = false;
        for (x, y) in pixels(region) {
            let p = image.get(x, y);
            let f = dist2(p, fg) < dist2(p, bg);
            let slot = &mut assign[idx(x, y)];
            if *slot != f || it == 0 {
                changed |= *slot != f;
                *slot = f;
            }
        }
        if !changed && it > 0 {
            break;
        }
        let f_mean = mean_of(image, pixels(region).filter(|&(x, y)| assign[idx(x, y)]));
        let b_mean = mean_of(image, pixels(region).filter(|&(x, y)| !assign[idx(x, y)]));
        match (f_mean, b_mean) {
            (Some(f), Some(g)) => {
                fg = f;
                bg = g;
            }
            _ => break,
        }
    }

    // largest 4-connected foreground component touching the box
    let rh = region.height() as usize;
    let mut label = vec![0u32; rw * rh];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for (x, y) in pixels(region) {
        let i = idx(x, y);
        if !assign[i] || label[i] != 0 {
            continue;
        }
        next += 1;
        label[i] = next;
        queue.push_back((x, y));
        let mut size = 0usize;
        let mut touches = false;
        while let Some((cx, cy)) = queue.pop_front() {
            size += 1;
            touches |= b.contains(cx, cy);
            let nbrs = [
                (cx.wrapping_sub(1), cy),
                (cx + 1, cy),
                (cx, cy.wrapping_sub(1)),
                (cx, cy + 1),
            ];
            for (nx, ny) in nbrs {
                if region.contains(nx, ny) {
                    let j = idx(nx, ny);
                    if assign[j] && label[j] == 0 {
                        label[j] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        if touches && best.map_or(true, |(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    let Some((_, keep)) = best else {
        return Ok(SegmentMask::from_box(w, h, *b));
    };
    let mut mask = SegmentMask::empty(w, h, *b);
    for (x, y) in pixels(region) {
        if label[idx(x, y)] == keep {
            mask.set(x, y, true);
        }
    }
    Ok(mask)
}

/// Smallest box covering every foreground pixel.
pub fn tighten_box(mask: &SegmentMask) -> Result<BoundingBox> {
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    if x1 == u32::MAX {
        return Err(Error::Empty("mask has no foreground".into()));
    }
    BoundingBox::new(x1, y1, x2, y2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedBox {
    pub class: usize,
    pub image_id: String,
    pub bbox: BoundingBox,
    pub source: BoundingBox,
    pub score: f64,
    pub fallback: bool,
}

/// Segment then tighten.
pub fn refine_box(segmenter: &dyn Segmenter, image: &Image, b: &BoundingBox) -> Result<(BoundingBox, SegmentMask)> {
    let mask = segmenter.segment(image, b)?;
    Ok((tighten_box(&mask)?, mask))
}
