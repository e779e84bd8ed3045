//! Stage manifests: what a stage read, what it wrote, and under which
//! configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    /// Hash of this stage's config section chained onto its upstream hash.
    pub config_hash: String,
    pub upstream_config_hash: String,
    /// Effective hyperparameters of the stage.
    pub config: serde_json::Value,
    /// Path (relative to the workdir when possible) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Deterministic summary numbers (losses, counts, metrics).
    pub metrics: serde_json::Value,
    pub wall_time_secs: f64,
}

impl StageManifest {
    pub fn path(workdir: &Path, stage: &str) -> PathBuf {
        workdir.join("manifests").join(format!("{stage}.json"))
    }

    pub fn save(&self, workdir: &Path) -> Result<()> {
        let p = Self::path(workdir, &self.stage);
        fs::create_dir_all(p.parent().expect("manifest dir"))?;
        fs::write(p, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// `Ok(None)` when the stage has never run in `workdir`.
    pub fn load(workdir: &Path, stage: &str) -> Result<Option<Self>> {
        let p = Self::path(workdir, stage);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file, or of a directory as the sorted list of its files'
/// relative paths and hashes.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for (rel, digest) in files {
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update([b'\n']);
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|_| Error::missing(path, "expected artifact is missing"))?;
        Ok(sha256_hex(&bytes))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push((rel, sha256_hex(&fs::read(&p)?)));
        }
    }
    Ok(())
}

/// `path` relative to `workdir` when it lies inside it.
pub fn display_path(workdir: &Path, path: &Path) -> String {
    path.strip_prefix(workdir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("d");
        fs::create_dir_all(d.join("sub")).unwrap();
        fs::write(d.join("a.txt"), "x").unwrap();
        fs::write(d.join("sub/b.txt"), "y").unwrap();
        let h1 = hash_path(&d).unwrap();
        assert_eq!(h1, hash_path(&d).unwrap());
        fs::write(d.join("sub/b.txt"), "z").unwrap();
        assert_ne!(h1, hash_path(&d).unwrap());
        assert_eq!(
            hash_path(&d.join("a.txt")).unwrap(),
            "2d711642b726b04401627ca9fbac32f5c8530fb1903cc4db02258717921a4881"
        );
        assert!(matches!(hash_path(&d.join("none")), Err(Error::MissingArtifact { .. })));
    }
}
