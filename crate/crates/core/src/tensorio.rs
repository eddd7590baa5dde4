//! On-disk tensor container and dataset manifests.
//!
//! Tensor layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PATK"
//! 4       1           version (1)
//! 5       1           dtype (0 = f32 LE)
//! 6       1           ndim (1..=8)
//! 7       4 * ndim    shape, u32 each
//! ...     4 * prod    row-major payload
//! ```
//!
//! Manifests are pretty-printed JSON.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PATK";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_DIMS: usize = 8;

/// File name of the manifest inside a dataset root.
pub const MANIFEST_FILE: &str = "manifest";
pub const MANIFEST_SCHEMA: u32 = 1;

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    if shape.len() > MAX_DIMS {
        return Err(Error::TooManyDims(shape.len()));
    }
    Ok(())
}

pub fn encode_tensor(data: &ArrayD<f32>) -> Result<Vec<u8>> {
    let shape = data.shape();
    check_shape(shape)?;
    let mut out = Vec::with_capacity(7 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    // iter() walks in logical row-major order regardless of memory layout
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ArrayD<f32>> {
    if bytes.len() < 7 {
        return Err(Error::Truncated {
            expected: 7,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(bytes[5]));
    }
    let ndim = bytes[6] as usize;
    if ndim > MAX_DIMS {
        return Err(Error::TooManyDims(ndim));
    }
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    check_shape(&shape)?;
    let count: usize = shape.iter().product();
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length checked above"))
}

pub fn write_tensor(path: impl AsRef<Path>, data: &ArrayD<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Writes an `f64` image as an `f32` tensor.
pub fn write_image(path: impl AsRef<Path>, img: &Array2<f64>) -> Result<()> {
    write_tensor(path, &img.mapv(|v| v as f32).into_dyn())
}

/// Reads a 2-D tensor into `f64`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let t = read_tensor(path)?;
    let shape = t.shape().to_vec();
    t.mapv(f64::from)
        .into_dimensionality()
        .map_err(|_| Error::InvalidShape(shape))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceTag {
    Simulated,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    /// Relative to the manifest directory.
    pub input: String,
    pub target: String,
    pub split: Split,
    pub provenance: ProvenanceTag,
    pub phantom_seed: u64,
    /// Lateral and axial offset of the crop's first pixel inside the simulated area, mm.
    pub crop_offset_mm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// "mbf" or "dmbf".
    pub input_kind: String,
    pub pitch_m: f64,
    pub probe_hash: String,
    pub grid_hash: String,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// SHA-256 of the serialized text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_text()?.as_bytes()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        fs::write(&path, self.to_text()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    /// Checks that every referenced file exists under `dir` and that no
    /// input or target file is shared between pairs.
    pub fn validate(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut errs = Vec::new();
        if self.schema_version != MANIFEST_SCHEMA {
            errs.push(format!("unsupported schema version {}", self.schema_version));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.pairs.iter().enumerate() {
            for f in [&p.input, &p.target] {
                if !dir.join(f).is_file() {
                    errs.push(format!("pair {i}: missing file {f}"));
                }
                if !seen.insert(f.as_str()) {
                    errs.push(format!("pair {i}: file {f} referenced more than once"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(errs.join("; ")))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable hash of any serializable configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}
