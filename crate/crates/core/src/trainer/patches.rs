//! Uniform-grid patch extraction and the on-disk dataset format.
//!
//! A dataset directory holds `patches.bin` (magic, patch height and width as
//! little-endian u32, patch count as u64, then every value as little-endian
//! f64, row-major, patch after patch) and `manifest.json` listing the source
//! location of every patch.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BCNNPAT1";
pub const PATCHES_FILE: &str = "patches.bin";
pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub image: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patch_shape: (usize, usize),
    pub stride: usize,
    pub count: usize,
    pub entries: Vec<PatchEntry>,
    pub skipped: Vec<SkippedImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patches: Vec<Array2<f64>>,
    pub manifest: DatasetManifest,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.manifest.patch_shape
    }

    /// Subset in the given order (manifest entries follow the patches).
    pub fn select(&self, indices: &[usize]) -> PatchDataset {
        PatchDataset {
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            manifest: DatasetManifest {
                count: indices.len(),
                entries: indices.iter().map(|&i| self.manifest.entries[i].clone()).collect(),
                ..self.manifest.clone()
            },
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (h, w) = self.patch_shape();
        let mut bytes = Vec::with_capacity(24 + self.len() * h * w * 8);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(h as u32).to_le_bytes());
        bytes.extend_from_slice(&(w as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for p in &self.patches {
            for v in p.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(PATCHES_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
        let path = dir.join(PATCHES_FILE);
        let patches = read_patch_file(&path)?;
        if patches.len() != manifest.count || manifest.entries.len() != manifest.count {
            return Err(Error::malformed(&path, "patch count disagrees with the manifest"));
        }
        if let Some(p) = patches.first() {
            if p.dim() != manifest.patch_shape {
                return Err(Error::malformed(&path, "patch shape disagrees with the manifest"));
            }
        }
        Ok(Self { patches, manifest })
    }
}

/// Read a bare patch file (also used for prior-chain sample batches).
pub fn read_patch_file(path: &Path) -> Result<Vec<Array2<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(Error::malformed(path, "missing patch-file header"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != count * h * w * 8 {
        return Err(Error::malformed(path, format!("expected {} data bytes, found {}", count * h * w * 8, body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(values
        .chunks_exact((h * w).max(1))
        .take(count)
        .map(|c| Array2::from_shape_vec((h, w), c.to_vec()).expect("shape"))
        .collect())
}

/// Write images of a common shape in the patch-file format.
pub fn write_patch_file(path: &Path, images: &[Array2<f64>]) -> Result<()> {
    let (h, w) = images.first().map(|p| p.dim()).unwrap_or((0, 0));
    if images.iter().any(|p| p.dim() != (h, w)) {
        return Err(Error::invalid("all images in a patch file must share one shape"));
    }
    let mut bytes = Vec::with_capacity(24 + images.len() * h * w * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    bytes.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for p in images {
        for v in p.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn grid_offsets(len: usize, patch: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=(len - patch) / stride).map(move |k| k * stride)
}

/// Number of patches a uniform grid yields on an image of the given shape.
pub fn grid_patch_count(shape: (usize, usize), patch: (usize, usize), stride: usize) -> usize {
    if shape.0 < patch.0 || shape.1 < patch.1 {
        return 0;
    }
    ((shape.0 - patch.0) / stride + 1) * ((shape.1 - patch.1) / stride + 1)
}

/// Stride whose total patch count over `shapes` is closest to `target`.
pub fn stride_for_target(shapes: &[(usize, usize)], patch: (usize, usize), target: usize) -> usize {
    let max_side = shapes.iter().map(|s| s.0.max(s.1)).max().unwrap_or(1).max(1);
    let count = |stride: usize| shapes.iter().map(|&s| grid_patch_count(s, patch, stride)).sum::<usize>();
    (1..=max_side)
        .min_by_key(|&s| count(s).abs_diff(target))
        .unwrap_or(1)
}

/// Extract `patch × patch` windows on a uniform grid with the given stride
/// from every image. Pixel values are clamped to [0, 1]; images smaller than
/// the patch are skipped and listed in the manifest.
pub fn extract_patches(
    images: &[(String, ArrayView2<'_, f64>)],
    patch: (usize, usize),
    stride: usize,
) -> Result<PatchDataset> {
    if patch.0 == 0 || patch.1 == 0 || stride == 0 {
        return Err(Error::invalid("patch size and stride must be positive"));
    }
    let mut patches = Vec::new();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (name, img) in images {
        let (h, w) = img.dim();
        if h < patch.0 || w < patch.1 {
            log::warn!("skipping {name}: {h}x{w} is smaller than the {}x{} patch", patch.0, patch.1);
            skipped.push(SkippedImage {
                image: name.clone(),
                reason: format!("{h}x{w} is smaller than the {}x{} patch", patch.0, patch.1),
            });
            continue;
        }
        for row in grid_offsets(h, patch.0, stride) {
            for col in grid_offsets(w, patch.1, stride) {
                let window = img.slice(s![row..row + patch.0, col..col + patch.1]);
                patches.push(window.mapv(|v| v.clamp(0.0, 1.0)));
                entries.push(PatchEntry {
                    image: name.clone(),
                    row,
                    col,
                });
            }
        }
    }
    Ok(PatchDataset {
        manifest: DatasetManifest {
            patch_shape: patch,
            stride,
            count: patches.len(),
            entries,
            skipped,
        },
        patches,
    })
}
