use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::SelectedInstance;
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

/// CSV `class,image_id,x1,y1,x2,y2,score`.
pub fn save_selected(selected: &[SelectedInstance], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "class,image_id,x1,y1,x2,y2,score")?;
    for s in selected {
        let b = s.bbox;
        writeln!(w, "{},{},{},{},{},{},{}", s.class, s.image_id, b.x1, b.y1, b.x2, b.y2, s.score)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_selected(path: &Path) -> Result<Vec<SelectedInstance>> {
    if !path.exists() {
        return Err(Error::missing(path, "run `wsolkit mil` first"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line,
            msg,
        };
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |j: usize| -> Result<u32> { rec[j].trim().parse().map_err(|e| bad(format!("field {j}: {e}"))) };
        let bbox = BoundingBox::new(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|e| bad(e.to_string()))?;
        out.push(SelectedInstance {
            class: rec[0].trim().parse().map_err(|e| bad(format!("class: {e}")))?,
            image_id: rec[1].to_string(),
            bbox,
            score: rec[6].trim().parse().map_err(|e| bad(format!("score: {e}")))?,
        });
    }
    Ok(out)
}
