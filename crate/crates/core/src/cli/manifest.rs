//! Output directories with a `manifest.json` listing every file written,
//! its tensor dims (for tensor files) and a SHA-256 of its bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensorfile::{decode_tensor, encode_tensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// `/`-separated, relative to the directory root.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub files: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    /// Read `dir/manifest.json`, check its kind, and verify every listed
    /// file's checksum and tensor dims.
    pub fn load(dir: &Path, kind: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        if manifest.kind != kind {
            return Err(Error::Format(format!(
                "{} describes a {} directory, expected {kind}",
                path.display(),
                manifest.kind
            )));
        }
        for entry in &manifest.files {
            let file = dir.join(&entry.path);
            let bytes = std::fs::read(&file).map_err(|_| Error::Checksum(file.clone()))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::Checksum(file));
            }
            if let Some(dims) = &entry.dims {
                if decode_tensor(&bytes)?.shape() != &dims[..] {
                    return Err(Error::Format(format!("{} dims disagree with the manifest", entry.path)));
                }
            }
        }
        Ok(manifest)
    }

    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|e| e.path == path)
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::Format(format!("manifest lacks numeric `{key}`")))
    }
}

/// A directory being written by one command. Every file goes through
/// [`OutDir::write`] so it lands in the manifest.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutDir {
    /// An existing non-empty directory is an error unless `force` is set,
    /// and even then it is only cleared if it carries a manifest (i.e. it
    /// was produced by this tool).
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            if !root.is_dir() {
                return Err(Error::InvalidArgument(format!("{} is not a directory", root.display())));
            }
            let non_empty = std::fs::read_dir(root)?.next().is_some();
            if non_empty {
                if !force {
                    return Err(Error::OutputExists(root.to_path_buf()));
                }
                if !root.join(MANIFEST_FILE).is_file() {
                    return Err(Error::InvalidArgument(format!(
                        "refusing to clear {}: it has no {MANIFEST_FILE}",
                        root.display()
                    )));
                }
                std::fs::remove_dir_all(root)?;
            }
        }
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8], dims: Option<Vec<usize>>) -> Result<()> {
        if rel.split('/').any(|part| part.is_empty() || part == "." || part == "..") || rel == MANIFEST_FILE {
            return Err(Error::InvalidArgument(format!("bad output path `{rel}`")));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.retain(|e| e.path != rel);
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            dims,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_tensor(&mut self, rel: &str, t: &Tensor) -> Result<()> {
        self.write(rel, &encode_tensor(t), Some(t.shape().to_vec()))
    }

    pub fn finish(mut self, kind: &str, meta: BTreeMap<String, serde_json::Value>) -> Result<Manifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            kind: kind.to_string(),
            files: self.files,
            meta,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}
