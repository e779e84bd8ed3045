//! Axis-aligned integer boxes with a half-open `[x1,x2) x [y1,y2)` convention.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    /// Builds a box, rejecting empty or inverted extents.
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox(format!(
                "[{x1},{y1},{x2},{y2}] has non-positive extent"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    pub fn full(width: u32, height: u32) -> Self {
        BoundingBox {
            x1: 0,
            y1: 0,
            x2: width,
            y2: height,
        }
    }

    /// Clips signed coordinates to `[0,W) x [0,H)`. Returns `None` when the
    /// clipped box has zero area.
    pub fn clipped(x1: i64, y1: i64, x2: i64, y2: i64, width: u32, height: u32) -> Option<Self> {
        let cx1 = x1.clamp(0, width as i64) as u32;
        let cy1 = y1.clamp(0, height as i64) as u32;
        let cx2 = x2.clamp(0, width as i64) as u32;
        let cy2 = y2.clamp(0, height as i64) as u32;
        BoundingBox::new(cx1, cy1, cx2, cy2).ok()
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x1 as f64 + self.x2 as f64) / 2.0,
            (self.y1 as f64 + self.y2 as f64) / 2.0,
        )
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        BoundingBox::new(x1, y1, x2, y2).ok()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    /// Intersection over union using integer areas.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Grows each side by `fraction` of the box extent, clipped to the image.
    pub fn expanded(&self, fraction: f64, width: u32, height: u32) -> BoundingBox {
        let dx = (self.width() as f64 * fraction).round() as i64;
        let dy = (self.height() as f64 * fraction).round() as i64;
        BoundingBox::clipped(
            self.x1 as i64 - dx,
            self.y1 as i64 - dy,
            self.x2 as i64 + dx,
            self.y2 as i64 + dy,
            width,
            height,
        )
        .unwrap_or(*self)
    }

    /// Maps an image-space box onto a `map_w x map_h` grid covering a
    /// `width x height` image. Left/top edges round down, right/bottom edges
    /// round up, then the result is clipped. `None` if the mapping is empty.
    pub fn to_grid(&self, width: u32, height: u32, map_w: usize, map_h: usize) -> Option<BoundingBox> {
        let sx = map_w as f64 / width as f64;
        let sy = map_h as f64 / height as f64;
        let x1 = (self.x1 as f64 * sx).floor() as i64;
        let y1 = (self.y1 as f64 * sy).floor() as i64;
        let x2 = (self.x2 as f64 * sx).ceil() as i64;
        let y2 = (self.y2 as f64 * sy).ceil() as i64;
        BoundingBox::clipped(x1, y1, x2, y2, map_w as u32, map_h as u32)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x1, self.y1, self.x2, self.y2)
    }
}
