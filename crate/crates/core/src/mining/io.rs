//! CSV dumps of raw score pools and mined proposals.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ImageScores, ScoredProposal};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

/// Ranked top-M proposals keyed by `(image_id, class)`.
pub type MinedSet = BTreeMap<(String, usize), Vec<ScoredProposal>>;

pub fn save_mined(mined: &MinedSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "image_id,class,x1,y1,x2,y2,contrast,activation,fused,rank")?;
    for ((id, class), list) in mined {
        for (rank, p) in list.iter().enumerate() {
            let b = p.bbox;
            writeln!(
                w,
                "{id},{class},{},{},{},{},{},{},{},{}",
                b.x1,
                b.y1,
                b.x2,
                b.y2,
                p.contrast,
                p.activation,
                p.fused,
                rank + 1
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path, line: usize) -> Result<T> {
    rec.get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column {i}")))?
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad value in column {i}")))
}

fn open_csv(path: &Path, hint: &str) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|_| Error::missing(path, hint))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn read_box(rec: &csv::StringRecord, at: usize, path: &Path, line: usize) -> Result<BoundingBox> {
    BoundingBox::new(
        field(rec, at, path, line)?,
        field(rec, at + 1, path, line)?,
        field(rec, at + 2, path, line)?,
        field(rec, at + 3, path, line)?,
    )
    .map_err(|e| parse_err(path, line, e.to_string()))
}

/// Reads a mined-proposal dump. Raw scores are not stored there and come
/// back as the normalized values.
pub fn load_mined(path: &Path) -> Result<MinedSet> {
    let mut r = open_csv(path, "mined proposals (run `mine`)")?;
    let mut out = MinedSet::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let id: String = field(&rec, 0, path, line)?;
        let class: usize = field(&rec, 1, path, line)?;
        let bbox = read_box(&rec, 2, path, line)?;
        let contrast: f64 = field(&rec, 6, path, line)?;
        let activation: f64 = field(&rec, 7, path, line)?;
        let fused: f64 = field(&rec, 8, path, line)?;
        let rank: usize = field(&rec, 9, path, line)?;
        out.entry((id, class)).or_default().push(ScoredProposal {
            index: rank - 1,
            bbox,
            class,
            raw_contrast: contrast,
            raw_activation: activation,
            contrast,
            activation,
            fused,
        });
    }
    Ok(out)
}

/// Raw per-class scores for every proposal: one row per (box, class).
pub fn save_pool(scores: &[ImageScores], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "image_id,index,class,x1,y1,x2,y2,contrast_raw,activation_raw")?;
    for s in scores {
        for (i, b) in s.boxes.iter().enumerate() {
            for c in 0..s.num_classes() {
                writeln!(
                    w,
                    "{},{},{c},{},{},{},{},{},{}",
                    s.image_id, s.indices[i], b.x1, b.y1, b.x2, b.y2, s.contrast[i][c], s.activation[i][c]
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<Vec<ImageScores>> {
    let mut r = open_csv(path, "scored proposal pool (run `mine`)")?;
    let mut out: Vec<ImageScores> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let id: String = field(&rec, 0, path, line)?;
        let index: usize = field(&rec, 1, path, line)?;
        let class: usize = field(&rec, 2, path, line)?;
        let bbox = read_box(&rec, 3, path, line)?;
        let contrast: f64 = field(&rec, 7, path, line)?;
        let activation: f64 = field(&rec, 8, path, line)?;
        if out.last().map(|s| s.image_id != id).unwrap_or(true) {
            out.push(ImageScores {
                image_id: id,
                indices: vec![],
                boxes: vec![],
                contrast: vec![],
                activation: vec![],
            });
        }
        let s = out.last_mut().unwrap();
        if class == 0 {
            s.indices.push(index);
            s.boxes.push(bbox);
            s.contrast.push(vec![]);
            s.activation.push(vec![]);
        }
        let (Some(c_row), Some(a_row)) = (s.contrast.last_mut(), s.activation.last_mut()) else {
            return Err(parse_err(path, line, "class rows must start at class 0"));
        };
        if c_row.len() != class {
            return Err(parse_err(path, line, "class rows out of order"));
        }
        c_row.push(contrast);
        a_row.push(activation);
    }
    Ok(out)
}
