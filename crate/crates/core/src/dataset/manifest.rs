use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Dataset, GtBox, LabeledImage};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    images: Vec<ManifestImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestImage {
    id: String,
    file: String,
    labels: Vec<u8>,
    #[serde(default)]
    gt: Vec<ManifestGt>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestGt {
    class: usize,
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Lossless `f32` dump, `WSOL` header.
    #[default]
    Raw,
    Png,
}

impl ImageFormat {
    fn extension(self) -> &'static str {
        match self {
            ImageFormat::Raw => "wsol",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Boxes dropped because they had zero area after clipping.
    pub dropped_boxes: usize,
}

/// Writes `manifest.json` plus one image file per entry under `images/`.
pub fn save_manifest(dataset: &Dataset, path: &Path, format: ImageFormat) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for img in &dataset.images {
        let rel = format!("images/{}.{}", img.id, format.extension());
        img.image.save(&dir.join(&rel))?;
        entries.push(ManifestImage {
            id: img.id.clone(),
            file: rel,
            labels: img.labels.clone(),
            gt: img
                .gt
                .iter()
                .map(|g| ManifestGt {
                    class: g.class,
                    x1: g.bbox.x1 as i64,
                    y1: g.bbox.y1 as i64,
                    x2: g.bbox.x2 as i64,
                    y2: g.bbox.y2 as i64,
                })
                .collect(),
        });
    }
    let text = serde_json::to_string_pretty(&ManifestFile { images: entries })?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a manifest and every image it references. Image paths are resolved
/// relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<(Dataset, LoadReport)> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::missing(path, "dataset manifest (run `gen-data` or set paths.dataset)"))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let num_classes = manifest
        .images
        .first()
        .map(|i| i.labels.len())
        .ok_or_else(|| Error::Empty(format!("{} lists no images", path.display())))?;

    let mut report = LoadReport::default();
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in manifest.images {
        let file = dir.join(&entry.file);
        if !file.exists() {
            return Err(Error::missing(file, format!("image for `{}`", entry.id)));
        }
        let image = Image::load(&file)?;
        let mut gt = Vec::with_capacity(entry.gt.len());
        for g in entry.gt {
            if g.x2 <= g.x1 || g.y2 <= g.y1 {
                return Err(Error::InvalidBox(format!(
                    "{}: gt box [{},{},{},{}] is inverted",
                    entry.id, g.x1, g.y1, g.x2, g.y2
                )));
            }
            match BoundingBox::clipped(g.x1, g.y1, g.x2, g.y2, image.width(), image.height()) {
                Some(bbox) => gt.push(GtBox {
                    class: g.class,
                    bbox,
                }),
                None => report.dropped_boxes += 1,
            }
        }
        images.push(LabeledImage {
            id: entry.id,
            image,
            labels: entry.labels,
            gt,
        });
    }
    if report.dropped_boxes > 0 {
        warn!(
            "{}: dropped {} gt boxes with zero area after clipping",
            path.display(),
            report.dropped_boxes
        );
    }
    let ds = Dataset {
        num_classes,
        images,
    };
    ds.validate()?;
    Ok((ds, report))
}
