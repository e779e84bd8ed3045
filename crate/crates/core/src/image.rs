//! RGB images with `f32` samples in `[0,1]`, stored row-major and interleaved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"WSOL";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: data.len(),
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::Format("image with zero extent".into()));
        }
        Ok(Image { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn fill_box(&mut self, b: &BoundingBox, rgb: [f32; 3]) {
        for y in b.y1..b.y2.min(self.height) {
            for x in b.x1..b.x2.min(self.width) {
                self.set(x, y, rgb);
            }
        }
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox::full(self.width, self.height)
    }

    pub fn crop(&self, b: &BoundingBox) -> Result<Image> {
        if !b.fits_in(self.width, self.height) {
            return Err(Error::InvalidBox(format!(
                "{b} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(b.area() as usize * 3);
        for y in b.y1..b.y2 {
            let start = self.offset(b.x1, y);
            let end = self.offset(b.x2 - 1, y) + 3;
            data.extend_from_slice(&self.data[start..end]);
        }
        Ok(Image {
            width: b.width(),
            height: b.height(),
            data,
        })
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Vec::with_capacity(width as usize * height as usize * 3);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        for oy in 0..height {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..width {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = (fx - x0 as f64) as f32;
                let p00 = self.get(x0, y0);
                let p10 = self.get(x1, y0);
                let p01 = self.get(x0, y1);
                let p11 = self.get(x1, y1);
                for c in 0..3 {
                    let top = p00[c] + (p10[c] - p00[c]) * wx;
                    let bottom = p01[c] + (p11[c] - p01[c]) * wx;
                    out.push(top + (bottom - top) * wy);
                }
            }
        }
        Image {
            width,
            height,
            data: out,
        }
    }

    /// Planar `3 x size x size` tensor for the classifier input, resampled if
    /// the image is not already `size x size`.
    pub fn to_planar(&self, size: u32) -> Vec<f64> {
        let resized;
        let src = if self.width == size && self.height == size {
            self
        } else {
            resized = self.resize_bilinear(size, size);
            &resized
        };
        let plane = size as usize * size as usize;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in src.data.chunks_exact(3).enumerate() {
            out[i] = px[0] as f64;
            out[plane + i] = px[1] as f64;
            out[2 * plane + i] = px[2] as f64;
        }
        out
    }

    pub fn channel_sums(&self) -> [f64; 3] {
        let mut s = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            s[0] += px[0] as f64;
            s[1] += px[1] as f64;
            s[2] += px[2] as f64;
        }
        s
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Loads a `.png` or raw `.wsol` image depending on the extension.
    pub fn load(path: &Path) -> Result<Image> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => Image::read_png(path),
            _ => Image::read_raw(path),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => self.write_png(path),
            _ => self.write_raw(path),
        }
    }

    pub fn read_raw(path: &Path) -> Result<Image> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != RAW_MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [width, height, channels] = header;
        if channels != 3 {
            return Err(Error::Format(format!(
                "{}: expected 3 channels, found {channels}",
                path.display()
            )));
        }
        let n = width as usize * height as usize * 3;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Image::from_raw(width, height, data)
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(RAW_MAGIC)?;
        for v in [self.width, self.height, 3] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Image> {
        let rgb = image::open(path)?.to_rgb8();
        let (width, height) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::from_raw(width, height, data)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::Rgb8)?;
        Ok(())
    }
}
