//! `WSDM` checkpoints: magic, version, `C`, `D`, then length-prefixed
//! little-endian `f64` blobs. The backbone lives in its own `WSCM` file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DetectorModel;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WSDM";
const VERSION: u32 = 1;

pub fn save_detector(model: &DetectorModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [VERSION, model.num_classes as u32, model.dim as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for blob in model.blobs() {
        w.write_all(&(blob.len() as u32).to_le_bytes())?;
        for v in blob {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn load_detector(path: &Path) -> Result<DetectorModel> {
    let file = File::open(path).map_err(|_| Error::missing(path, "detector checkpoint (run `train-det`)"))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a WSDM checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported detector version {version}")));
    }
    let c = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut m = DetectorModel::zeros(c, d);
    for blob in [
        &mut m.feat_mean,
        &mut m.feat_scale,
        &mut m.cls_w,
        &mut m.cls_b,
        &mut m.reg_w,
        &mut m.reg_b,
    ] {
        let n = read_u32(&mut r)? as usize;
        if n != blob.len() {
            return Err(Error::Dimension {
                expected: blob.len(),
                got: n,
            });
        }
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        for (v, b) in blob.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut m = DetectorModel::zeros(2, 5);
        m.cls_w.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        m.reg_b[3] = -1.0 / 3.0;
        m.feat_scale[2] = 7.25;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.wsdm");
        save_detector(&m, &p).unwrap();
        assert_eq!(load_detector(&p).unwrap(), m);
        std::fs::write(&p, b"WSCM....").unwrap();
        assert!(matches!(load_detector(&p), Err(Error::Format(_))));
    }
}
