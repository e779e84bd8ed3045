//! `WSCM` checkpoints: magic, architecture header, then little-endian `f32`
//! parameter blobs in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, ClassifierModel, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WSCM";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<()> {
    let arch = model.arch()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        arch.input as u32,
        arch.conv1 as u32,
        arch.k as u32,
        arch.num_classes as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for blob in &model.params.blobs {
        w.write_all(&(blob.len() as u32).to_le_bytes())?;
        for &v in blob {
            w.write_all(&(v as f32).to_le_bytes())?;
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

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel> {
    let file = File::open(path).map_err(|_| Error::missing(path, "classifier checkpoint (run `train-cls`)"))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a WSCM checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = Architecture {
        input: read_u32(&mut r)? as usize,
        conv1: read_u32(&mut r)? as usize,
        k: read_u32(&mut r)? as usize,
        num_classes: read_u32(&mut r)? as usize,
    };
    let mut params = Params::zeros(&arch);
    for (blob, expected) in params.blobs.iter_mut().zip(arch.blob_sizes()) {
        let n = read_u32(&mut r)? as usize;
        if n != expected {
            return Err(Error::Dimension { expected, got: n });
        }
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        for (v, b) in blob.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    Ok(ClassifierModel {
        arch: Some(arch),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = ClassifierModel::init(Architecture::new(3), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wscm");
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wscm");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
