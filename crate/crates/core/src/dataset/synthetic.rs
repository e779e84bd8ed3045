//! Seeded synthetic scenes: one solid, distinctively coloured shape per class
//! on a flat background with neutral clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, GtBox, LabeledImage};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Disk,
    Triangle,
    Cross,
    Diamond,
}

impl Shape {
    /// Whether unit-square coordinates `(u, v)` fall inside the shape.
    fn covers(self, u: f64, v: f64) -> bool {
        let du = (u - 0.5).abs();
        let dv = (v - 0.5).abs();
        match self {
            Shape::Square => true,
            Shape::Disk => du * du + dv * dv <= 0.25,
            Shape::Triangle => v >= 2.0 * du,
            Shape::Cross => du < 1.0 / 6.0 || dv < 1.0 / 6.0,
            Shape::Diamond => du + dv <= 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    pub shape: Shape,
    pub color: [f32; 3],
}

const SHAPES: [Shape; 5] = [
    Shape::Square,
    Shape::Disk,
    Shape::Triangle,
    Shape::Cross,
    Shape::Diamond,
];

const COLORS: [[f32; 3]; 6] = [
    [0.85, 0.12, 0.10],
    [0.10, 0.22, 0.85],
    [0.12, 0.70, 0.15],
    [0.90, 0.80, 0.10],
    [0.75, 0.15, 0.75],
    [0.10, 0.75, 0.80],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_images: usize,
    pub width: u32,
    pub height: u32,
    pub num_classes: usize,
    /// Inclusive range of objects placed per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of object box sides in pixels.
    pub object_size: (u32, u32),
    /// Expected clutter patches per 256 background pixels.
    pub clutter_density: f64,
    /// Overrides the default palette when non-empty (one entry per class).
    pub palette: Vec<ClassStyle>,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_images: 50,
            width: 64,
            height: 64,
            num_classes: 2,
            objects_per_image: (1, 2),
            object_size: (16, 28),
            clutter_density: 0.5,
            palette: Vec::new(),
            id_prefix: "img".into(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config("image sides must be at least 32".into()));
        }
        let (lo, hi) = self.object_size;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!("bad object_size range ({lo}, {hi})")));
        }
        if hi > self.width.min(self.height) {
            return Err(Error::Config(format!(
                "objects up to {hi}px do not fit a {}x{} image",
                self.width, self.height
            )));
        }
        if self.objects_per_image.0 > self.objects_per_image.1 {
            return Err(Error::Config("objects_per_image range is inverted".into()));
        }
        if !self.palette.is_empty() && self.palette.len() != self.num_classes {
            return Err(Error::Config("palette must list one style per class".into()));
        }
        if !(0.0..=16.0).contains(&self.clutter_density) {
            return Err(Error::Config("clutter_density out of range".into()));
        }
        Ok(())
    }

    pub fn style(&self, class: usize) -> ClassStyle {
        if let Some(s) = self.palette.get(class) {
            return *s;
        }
        ClassStyle {
            shape: SHAPES[class % SHAPES.len()],
            color: COLORS[class % COLORS.len()],
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let images = (0..cfg.num_images)
        .map(|i| render_scene(cfg, &mut rng, format!("{}_{i:05}", cfg.id_prefix)))
        .collect();
    Ok(Dataset {
        num_classes: cfg.num_classes,
        images,
    })
}

fn render_scene(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String) -> LabeledImage {
    let (w, h) = (cfg.width, cfg.height);
    let bg = rng.gen_range(0.6f32..0.88);
    let mut image = Image::filled(w, h, [bg; 3]);

    let count = rng.gen_range(cfg.objects_per_image.0..=cfg.objects_per_image.1);
    let mut placed: Vec<(usize, BoundingBox)> = Vec::new();
    for _ in 0..count {
        let class = rng.gen_range(0..cfg.num_classes);
        for _attempt in 0..100 {
            let bw = rng.gen_range(cfg.object_size.0..=cfg.object_size.1);
            let bh = rng.gen_range(cfg.object_size.0..=cfg.object_size.1);
            let x = rng.gen_range(0..=w - bw);
            let y = rng.gen_range(0..=h - bh);
            let b = BoundingBox { x1: x, y1: y, x2: x + bw, y2: y + bh };
            let clear = placed
                .iter()
                .all(|(_, o)| o.expanded(0.15, w, h).intersection(&b).is_none());
            if clear {
                placed.push((class, b));
                break;
            }
        }
    }

    let patches = (cfg.clutter_density * (w * h) as f64 / 256.0).round() as usize;
    for _ in 0..patches {
        let pw = rng.gen_range(2..=6u32);
        let ph = rng.gen_range(2..=6u32);
        let x = rng.gen_range(0..=w - pw);
        let y = rng.gen_range(0..=h - ph);
        let tone = rng.gen_range(0.25f32..0.5);
        let p = BoundingBox { x1: x, y1: y, x2: x + pw, y2: y + ph };
        let near_object = placed
            .iter()
            .any(|(_, o)| o.expanded(0.3, w, h).intersection(&p).is_some());
        if !near_object {
            image.fill_box(&p, [tone; 3]);
        }
    }

    let mut labels = vec![0u8; cfg.num_classes];
    let mut gt = Vec::with_capacity(placed.len());
    for (class, b) in placed {
        let style = cfg.style(class);
        let jitter: f32 = rng.gen_range(-0.04..0.04);
        let color = style.color.map(|c| (c + jitter).clamp(0.0, 1.0));
        if let Some(tight) = paint(&mut image, &b, style.shape, color) {
            labels[class] = 1;
            gt.push(GtBox { class, bbox: tight });
        }
    }
    LabeledImage {
        id,
        image,
        labels,
        gt,
    }
}

/// Paints `shape` inside `b` and returns the tight box of painted pixels.
fn paint(image: &mut Image, b: &BoundingBox, shape: Shape, color: [f32; 3]) -> Option<BoundingBox> {
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
    for y in b.y1..b.y2 {
        let v = (y - b.y1) as f64 + 0.5;
        for x in b.x1..b.x2 {
            let u = (x - b.x1) as f64 + 0.5;
            if shape.covers(u / b.width() as f64, v / b.height() as f64) {
                image.set(x, y, color);
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    BoundingBox::new(x1, y1, x2, y2).ok()
}
