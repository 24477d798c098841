//! Binary matrix files with a text sidecar.
//!
//! Layout: `GPHR`, version `u32`, rows `u64`, cols `u64` (all little endian),
//! followed by the column-major `f64` payload. The sidecar `<file>.meta` is
//! TOML holding the column labels and the hash of the producing config.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use gpdeim_core::reduce::SnapshotLabel;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"GPHR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub time: f64,
    pub eta: Vec<f64>,
}

impl From<&SnapshotLabel> for ColumnLabel {
    fn from(l: &SnapshotLabel) -> Self {
        Self {
            time: l.time,
            eta: l.eta.clone(),
        }
    }
}

impl From<&ColumnLabel> for SnapshotLabel {
    fn from(l: &ColumnLabel) -> Self {
        Self {
            time: l.time,
            eta: l.eta.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// What the matrix holds, e.g. `basis` or `states`.
    pub kind: String,
    pub config_hash: String,
    #[serde(default)]
    pub labels: Vec<ColumnLabel>,
    /// Free-form entries such as certification residuals.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

pub fn encode(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>, CliError> {
    let bad = |m: String| CliError::Artifact(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("container truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad container magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported container version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("container size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(bad(format!(
            "container payload is {} bytes, expected {expected} for {rows}x{cols}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, meta: &Metadata) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&encode(m))?;
    let text = toml::to_string(meta).map_err(|e| CliError::Artifact(format!("metadata: {e}")))?;
    fs::write(meta_path(path), text)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, Metadata), CliError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| CliError::Artifact(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let m = decode(&bytes).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| CliError::Artifact(format!("cannot open {}: {e}", mp.display())))?;
    let meta: Metadata = toml::from_str(&text).map_err(|e| CliError::Artifact(format!("{}: {e}", mp.display())))?;
    if !meta.labels.is_empty() && meta.labels.len() != m.ncols() {
        return Err(CliError::Artifact(format!(
            "{}: {} labels for {} columns",
            mp.display(),
            meta.labels.len(),
            m.ncols()
        )));
    }
    Ok((m, meta))
}
