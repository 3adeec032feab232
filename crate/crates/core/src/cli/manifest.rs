use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run: enough to repeat it exactly.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    /// Resolved option values, including defaults.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_inputs(paths: &[PathBuf]) -> Result<Vec<InputDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: file_digest(p)?,
            })
        })
        .collect()
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json`
/// otherwise.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut p = output.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        write_atomic(&p, b"abc").unwrap();
        assert_eq!(
            file_digest(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(!dir.path().join("x.tmp").exists());
    }

    #[test]
    fn manifest_locations() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(manifest_path(dir.path()), dir.path().join("manifest.json"));
        assert_eq!(manifest_path(&dir.path().join("m.model")), dir.path().join("m.model.manifest.json"));
    }
}
