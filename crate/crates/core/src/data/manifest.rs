use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nifti::parse_nifti1;
use super::rawvol::parse_rawvol;
use super::volume::{SubjectMeta, Volume};
use crate::error::{Error, Result};

/// One dataset entry; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        if entries.is_empty() {
            return Err(Error::data(format!("manifest {} has no entries", path.display())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads entry `i` with its mask (if listed) and annotations.
    pub fn load_volume(&self, i: usize) -> Result<Volume> {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::data(format!("manifest index {i} out of range ({})", self.len())))?;
        let mut v = load_volume(&self.resolve(&entry.path))?;
        if let Some(mp) = &entry.mask_path {
            let mask = load_mask(&self.resolve(mp))?;
            v = v.with_mask(mask)?;
        }
        let id = entry
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(v.with_meta(SubjectMeta {
            id,
            age: entry.age,
            sex: entry.sex,
        }))
    }
}

/// Reads a `.nii` or `.rawvol` file by extension.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => Ok(parse_nifti1(&bytes)?.1),
        Some("rawvol") => {
            let (_, t) = parse_rawvol(&bytes)?;
            Volume::new(t)
        }
        _ => Err(Error::Unsupported(format!(
            "{}: expected a .nii or .rawvol file",
            path.display()
        ))),
    }
}

/// Reads a mask volume; nonzero voxels are inside.
pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    Ok(load_volume(path)?.voxels().data().iter().map(|&v| v != 0.0).collect())
}
