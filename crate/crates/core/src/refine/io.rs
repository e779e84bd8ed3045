use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::RefinedBox;
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

const HEADER: &str = "class,image_id,x1,y1,x2,y2,score,src_x1,src_y1,src_x2,src_y2,fallback";

/// CSV with the refined box first and the box it came from after the score.
pub fn save_refined(boxes: &[RefinedBox], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HEADER}")?;
    for r in boxes {
        let (b, s) = (r.bbox, r.source);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.class,
            r.image_id,
            b.x1,
            b.y1,
            b.x2,
            b.y2,
            r.score,
            s.x1,
            s.y1,
            s.x2,
            s.y2,
            u8::from(r.fallback)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_refined(path: &Path) -> Result<Vec<RefinedBox>> {
    if !path.exists() {
        return Err(Error::missing(path, "run `wsolkit refine` first"));
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
        if rec.len() != 12 {
            return Err(bad(format!("expected 12 fields, found {}", rec.len())));
        }
        let num = |j: usize| -> Result<u32> { rec[j].trim().parse().map_err(|e| bad(format!("field {j}: {e}"))) };
        let bbox = BoundingBox::new(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|e| bad(e.to_string()))?;
        let source = BoundingBox::new(num(7)?, num(8)?, num(9)?, num(10)?).map_err(|e| bad(e.to_string()))?;
        out.push(RefinedBox {
            class: rec[0].trim().parse().map_err(|e| bad(format!("class: {e}")))?,
            image_id: rec[1].to_string(),
            bbox,
            source,
            score: rec[6].trim().parse().map_err(|e| bad(format!("score: {e}")))?,
            fallback: num(11)? != 0,
        });
    }
    Ok(out)
}
