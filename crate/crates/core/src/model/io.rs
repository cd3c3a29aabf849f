//! Binary matrix container and parameter manifests.
//!
//! A container is a 24-byte header followed by the payload, all little
//! endian:
//!
//! ```text
//! magic   b"USGF"
//! version u32 (= 1)
//! rows    u64
//! cols    u64
//! data    rows * cols f64, row-major
//! ```
//!
//! A parameter set is a JSON manifest naming one container per tensor,
//! stored next to it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"USGF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"USGF\"")]
    Magic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("payload holds {got} bytes, header announces {want}")]
    Truncated { got: usize, want: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl FormatError {
    /// True for failures of the underlying file system rather than of the
    /// content.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io(_))
    }
}

pub fn write_matrix<W: Write>(mut w: W, m: &Matrix) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.data().len());
    write_matrix(&mut out, m).expect("writing to a Vec cannot fail");
    out
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Matrix, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_matrix(&bytes)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, FormatError> {
    if bytes.len() < 24 {
        return Err(FormatError::Truncated {
            got: bytes.len(),
            want: 24,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(FormatError::Magic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[24..];
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(FormatError::Truncated {
            got: payload.len(),
            want: usize::MAX,
        })?;
    if payload.len() != want {
        return Err(FormatError::Truncated {
            got: payload.len(),
            want,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    Ok(Matrix::new(rows as usize, cols as usize, data).expect("length checked"))
}

pub fn load_matrix(path: &Path) -> Result<Matrix, FormatError> {
    decode_matrix(&fs::read(path)?)
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<(), FormatError> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    rows: usize,
    cols: usize,
}

const MANIFEST_FORMAT: &str = "usg-params";

/// Writes `manifest.json` plus one container per tensor into `dir`.
pub fn save_params(dir: &Path, config: &ModelConfig, params: &ModelParams) -> Result<PathBuf, FormatError> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (name, m) in params.to_named() {
        let file = format!("{name}.usgf");
        save_matrix(&dir.join(&file), &m)?;
        tensors.push(TensorEntry {
            name,
            file,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: VERSION,
        config: config.clone(),
        tensors,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a manifest and its tensors; files resolve relative to the manifest.
pub fn load_params(manifest_path: &Path) -> Result<(ModelConfig, ModelParams), FormatError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != VERSION {
        return Err(FormatError::Manifest(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut named = BTreeMap::new();
    for t in &manifest.tensors {
        let m = load_matrix(&base.join(&t.file))?;
        if m.shape() != (t.rows, t.cols) {
            return Err(FormatError::Manifest(format!(
                "{} is {:?}, manifest says {:?}",
                t.name,
                m.shape(),
                (t.rows, t.cols)
            )));
        }
        named.insert(t.name.clone(), m);
    }
    let params = ModelParams::from_named(&manifest.config, &named)?;
    Ok((manifest.config, params))
}
