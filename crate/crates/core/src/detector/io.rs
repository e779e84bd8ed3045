use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Detection;
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

/// CSV `image_id,class,x1,y1,x2,y2,score`.
pub fn save_detections(dets: &[Detection], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "image_id,class,x1,y1,x2,y2,score")?;
    for d in dets {
        let b = d.bbox;
        writeln!(w, "{},{},{},{},{},{},{}", d.image_id, d.class, b.x1, b.y1, b.x2, b.y2, d.score)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    if !path.exists() {
        return Err(Error::missing(path, "run `wsolkit detect` first"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            msg,
        };
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |j: usize| -> Result<u32> { rec[j].trim().parse().map_err(|e| bad(format!("field {j}: {e}"))) };
        out.push(Detection {
            image_id: rec[0].to_string(),
            class: rec[1].trim().parse().map_err(|e| bad(format!("class: {e}")))?,
            bbox: BoundingBox::new(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|e| bad(e.to_string()))?,
            score: rec[6].trim().parse().map_err(|e| bad(format!("score: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = vec![Detection {
            image_id: "t_00001".into(),
            bbox: BoundingBox::new(3, 4, 20, 30).unwrap(),
            class: 1,
            score: 0.9173,
        }];
        save_detections(&d, &p).unwrap();
        assert_eq!(load_detections(&p).unwrap(), d);
        assert!(matches!(load_detections(&dir.path().join("none.csv")), Err(Error::MissingArtifact { .. })));
    }
}
