//! Class-independent proposals: CSV ingestion and a built-in dense generator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fnv1a, Dataset, LoadReport};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub objectness: f64,
}

/// Proposals keyed by image id, in file order within each image.
pub type ProposalSet = BTreeMap<String, Vec<Proposal>>;

/// Reads `image_id,x1,y1,x2,y2[,objectness]` rows. Boxes are clipped to the
/// owning image; rows that clip to nothing are dropped and counted.
pub fn load_proposals(path: &Path, dataset: &Dataset) -> Result<(ProposalSet, LoadReport)> {
    let dims: HashMap<&str, (u32, u32)> = dataset
        .images
        .iter()
        .map(|i| (i.id.as_str(), (i.image.width(), i.image.height())))
        .collect();
    let file = File::open(path).map_err(|_| Error::missing(path, "proposals CSV"))?;
    let name = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };

    let mut out = ProposalSet::new();
    let mut report = LoadReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 1 && fields.first() == Some(&"image_id") {
            continue;
        }
        if fields.len() != 5 && fields.len() != 6 {
            return Err(parse_err(
                lineno,
                format!("expected 5 or 6 fields, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        let mut coords = [0i64; 4];
        for (k, c) in coords.iter_mut().enumerate() {
            *c = fields[k + 1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad coordinate `{}`", fields[k + 1])))?;
        }
        let objectness = match fields.get(5) {
            Some(s) if !s.is_empty() => s
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("bad objectness `{s}`")))?,
            _ => 0.0,
        };
        let [x1, y1, x2, y2] = coords;
        if x2 <= x1 || y2 <= y1 {
            return Err(parse_err(
                lineno,
                format!("box [{x1},{y1},{x2},{y2}] has non-positive extent"),
            ));
        }
        let &(w, h) = dims
            .get(id)
            .ok_or_else(|| parse_err(lineno, format!("unknown image id `{id}`")))?;
        match BoundingBox::clipped(x1, y1, x2, y2, w, h) {
            Some(bbox) => out
                .entry(id.to_string())
                .or_default()
                .push(Proposal { bbox, objectness }),
            None => report.dropped_boxes += 1,
        }
    }
    if report.dropped_boxes > 0 {
        warn!(
            "{}: dropped {} proposals with zero area after clipping",
            path.display(),
            report.dropped_boxes
        );
    }
    Ok((out, report))
}

pub fn save_proposals(set: &ProposalSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "image_id,x1,y1,x2,y2,objectness")?;
    for (id, props) in set {
        for p in props {
            let b = p.bbox;
            writeln!(w, "{id},{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, p.objectness)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Dense multi-scale grid plus seeded jitter boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// Square box sides as fractions of `min(W, H)`.
    pub scales: Vec<f64>,
    /// Height/width ratios applied at every scale.
    pub aspects: Vec<f64>,
    /// Grid stride as a fraction of the box side.
    pub stride: f64,
    /// Extra uniformly jittered boxes per image.
    pub jitter: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            scales: vec![0.25, 0.32, 0.4, 0.5, 0.65, 0.85],
            aspects: vec![1.0],
            stride: 0.4,
            jitter: 40,
        }
    }
}

pub fn generate_proposals(width: u32, height: u32, cfg: &ProposalConfig, seed: u64) -> Vec<Proposal> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let base = width.min(height) as f64;
    let mut push = |b: BoundingBox, out: &mut Vec<Proposal>| {
        if seen.insert(b) {
            out.push(Proposal {
                bbox: b,
                objectness: 0.0,
            });
        }
    };
    for &scale in &cfg.scales {
        for &aspect in &cfg.aspects {
            let bw = (base * scale / aspect.sqrt()).round().max(2.0) as u32;
            let bh = (base * scale * aspect.sqrt()).round().max(2.0) as u32;
            if bw > width || bh > height {
                continue;
            }
            let sx = ((bw as f64 * cfg.stride).round() as u32).max(1);
            let sy = ((bh as f64 * cfg.stride).round() as u32).max(1);
            let xs = grid_positions(width - bw, sx);
            let ys = grid_positions(height - bh, sy);
            for &y in &ys {
                for &x in &xs {
                    push(BoundingBox { x1: x, y1: y, x2: x + bw, y2: y + bh }, &mut out);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_side = (base * 0.15).max(2.0);
    let mut tries = 0;
    let mut added = 0;
    while added < cfg.jitter && tries < cfg.jitter * 20 {
        tries += 1;
        let bw = rng.gen_range(min_side..=width as f64).round() as u32;
        let bh = rng.gen_range(min_side..=height as f64).round() as u32;
        let x = rng.gen_range(0..=width - bw);
        let y = rng.gen_range(0..=height - bh);
        let before = out.len();
        push(BoundingBox { x1: x, y1: y, x2: x + bw, y2: y + bh }, &mut out);
        if out.len() > before {
            added += 1;
        }
    }
    push(BoundingBox::full(width, height), &mut out);
    out
}

/// Evenly spaced offsets in `[0, span]` that always include both ends.
fn grid_positions(span: u32, step: u32) -> Vec<u32> {
    let mut v: Vec<u32> = (0..=span).step_by(step as usize).collect();
    if *v.last().unwrap() != span {
        v.push(span);
    }
    v
}

/// Built-in proposals for every image of a dataset; per-image seeds mix the
/// global seed with the image id.
pub fn generate_proposal_set(dataset: &Dataset, cfg: &ProposalConfig, seed: u64) -> ProposalSet {
    dataset
        .images
        .iter()
        .map(|img| {
            let s = seed ^ fnv1a(img.id.as_bytes());
            (
                img.id.clone(),
                generate_proposals(img.image.width(), img.image.height(), cfg, s),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledImage;
    use crate::image::Image;

    fn ds() -> Dataset {
        Dataset {
            num_classes: 2,
            images: vec![LabeledImage {
                id: "img1".into(),
                image: Image::filled(32, 32, [0.5; 3]),
                labels: vec![1, 0],
                gt: vec![],
            }],
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_row() {
        let f = write("img1,0,0,10,10,0.9\n");
        let (set, rep) = load_proposals(f.path(), &ds()).unwrap();
        assert_eq!(rep.dropped_boxes, 0);
        assert_eq!(set["img1"].len(), 1);
        assert_eq!(set["img1"][0].bbox, BoundingBox::new(0, 0, 10, 10).unwrap());
        assert_eq!(set["img1"][0].objectness, 0.9);
    }

    #[test]
    fn objectness_optional() {
        let f = write("image_id,x1,y1,x2,y2,objectness\nimg1,1,2,3,4\n");
        let (set, _) = load_proposals(f.path(), &ds()).unwrap();
        assert_eq!(set["img1"][0].objectness, 0.0);
    }

    #[test]
    fn inverted_box_rejected_with_line() {
        let f = write("img1,0,0,10,10\nimg1,10,0,5,10\n");
        match load_proposals(f.path(), &ds()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("img1,0,0,10,10\nimg1,zero,0,4,4\n");
        assert!(matches!(
            load_proposals(f.path(), &ds()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn offimage_box_dropped() {
        let f = write("img1,40,40,50,50\nimg1,-4,-4,8,8\n");
        let (set, rep) = load_proposals(f.path(), &ds()).unwrap();
        assert_eq!(rep.dropped_boxes, 1);
        assert_eq!(set["img1"][0].bbox, BoundingBox::new(0, 0, 8, 8).unwrap());
    }

    #[test]
    fn accepts_full_budget() {
        let mut text = String::new();
        for i in 0..2000u32 {
            let x = i % 20;
            let y = (i / 20) % 20;
            text.push_str(&format!("img1,{x},{y},{},{},0.{i}\n", x + 5 + i % 7, y + 6));
        }
        let f = write(&text);
        let (set, _) = load_proposals(f.path(), &ds()).unwrap();
        assert_eq!(set["img1"].len(), 2000);
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        let cfg = ProposalConfig::default();
        let a = generate_proposals(64, 64, &cfg, 3);
        let b = generate_proposals(64, 64, &cfg, 3);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.bbox.fits_in(64, 64) && p.bbox.area() > 0));
    }
}
