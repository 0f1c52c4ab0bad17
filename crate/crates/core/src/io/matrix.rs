//! Column-binary matrix files.
//!
//! Layout: one line of JSON header (sorted keys, space-padded so that the
//! header plus its newline is a multiple of 64 bytes), then the row-major
//! little-endian `f32` payload.
//!
//! ```text
//! {"data_sha256":"…","dtype":"f32le","format":"eeg-audit-matrix/1","meta":{…},"row_id_digest":"…","shape":[rows,cols]}   \n
//! <rows·cols·4 bytes>
//! ```
//!
//! `data_sha256` covers the payload only. `row_id_digest` is the SHA-256 of
//! the row ids joined by `\n`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MATRIX_FORMAT: &str = "eeg-audit-matrix/1";
pub const DTYPE: &str = "f32le";
/// Header alignment in bytes.
pub const HEADER_ALIGN: usize = 64;

pub type Meta = BTreeMap<String, serde_json::Value>;

/// Header fields, declared in sorted order so serialisation is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub data_sha256: String,
    pub dtype: String,
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    pub row_id_digest: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredMatrix {
    pub header: MatrixHeader,
    pub values: DMatrix<f64>,
}

/// `"{split}-{index:06}"`.
pub fn row_ids(split: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{split}-{i:06}")).collect()
}

pub fn row_id_digest(ids: &[String]) -> String {
    hex::encode(Sha256::digest(ids.join("\n").as_bytes()))
}

/// Rounds every entry to the nearest `f32`, the precision of stored files.
pub fn quantize_f32(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| f64::from(v as f32))
}

/// Whether a file may hold non-finite values. Epoch and raw feature files
/// do: a bad epoch is reported per row and its feature row imputed. Caches
/// reject the whole file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finite {
    Required,
    Allowed,
}

fn payload(m: &DMatrix<f64>, path: &Path, finite: Finite) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(m.len() * 4);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)] as f32;
            if finite == Finite::Required && !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{} row {r} column {c}", path.display()),
                });
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Serialises a matrix to the binary layout.
pub fn encode_matrix(m: &DMatrix<f64>, row_id_digest: &str, meta: Option<Meta>, path: &Path) -> Result<Vec<u8>> {
    encode_matrix_with(m, row_id_digest, meta, path, Finite::Required)
}

pub fn encode_matrix_with(
    m: &DMatrix<f64>,
    row_id_digest: &str,
    meta: Option<Meta>,
    path: &Path,
    finite: Finite,
) -> Result<Vec<u8>> {
    let data = payload(m, path, finite)?;
    let header = MatrixHeader {
        data_sha256: hex::encode(Sha256::digest(&data)),
        dtype: DTYPE.into(),
        format: MATRIX_FORMAT.into(),
        meta,
        row_id_digest: row_id_digest.into(),
        shape: [m.nrows(), m.ncols()],
    };
    let mut head = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let padded = (head.len() + 1).div_ceil(HEADER_ALIGN) * HEADER_ALIGN;
    head.resize(padded - 1, b' ');
    head.push(b'\n');
    head.extend_from_slice(&data);
    Ok(head)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, row_ids: &[String], meta: Option<Meta>) -> Result<()> {
    write_matrix_with(path, m, row_ids, meta, Finite::Required)
}

pub fn write_matrix_with(
    path: &Path,
    m: &DMatrix<f64>,
    row_ids: &[String],
    meta: Option<Meta>,
    finite: Finite,
) -> Result<()> {
    if row_ids.len() != m.nrows() {
        return Err(Error::shape(format!("row ids of {}", path.display()), m.nrows(), row_ids.len()));
    }
    let bytes = encode_matrix_with(m, &row_id_digest(row_ids), meta, path, finite)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<StoredMatrix> {
    decode_matrix_with(bytes, path, Finite::Required)
}

pub fn decode_matrix_with(bytes: &[u8], path: &Path, finite: Finite) -> Result<StoredMatrix> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, "missing header line"))?;
    if (nl + 1) % HEADER_ALIGN != 0 {
        return Err(format_err(path, "header is not 64-byte aligned"));
    }
    let header: MatrixHeader =
        serde_json::from_slice(bytes[..nl].trim_ascii_end()).map_err(|e| Error::json(path, e))?;
    if header.format != MATRIX_FORMAT || header.dtype != DTYPE {
        return Err(format_err(
            path,
            format!("unsupported format {} / dtype {}", header.format, header.dtype),
        ));
    }
    let data = &bytes[nl + 1..];
    let [rows, cols] = header.shape;
    let expected = rows * cols * 4;
    if data.len() != expected {
        return Err(format_err(
            path,
            format!("payload has {} bytes, shape {rows}x{cols} needs {expected} (truncated or oversized)", data.len()),
        ));
    }
    if hex::encode(Sha256::digest(data)) != header.data_sha256 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let mut values = DMatrix::zeros(rows, cols);
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if finite == Finite::Required && !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} row {} column {}", path.display(), k / cols, k % cols),
            });
        }
        values[(k / cols, k % cols)] = f64::from(v);
    }
    Ok(StoredMatrix { header, values })
}

pub fn read_matrix(path: &Path) -> Result<StoredMatrix> {
    read_matrix_with(path, Finite::Required)
}

pub fn read_matrix_with(path: &Path, finite: Finite) -> Result<StoredMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix_with(&bytes, path, finite)
}

/// Reads a matrix and checks its rows against the expected ids.
pub fn read_aligned(path: &Path, ids: &[String], what: &str) -> Result<DMatrix<f64>> {
    read_aligned_with(path, ids, what, Finite::Required)
}

pub fn read_aligned_with(path: &Path, ids: &[String], what: &str, finite: Finite) -> Result<DMatrix<f64>> {
    let m = read_matrix_with(path, finite)?;
    if m.header.shape[0] != ids.len() {
        return Err(Error::Alignment {
            what: what.into(),
            detail: format!("{} rows on disk, manifest lists {}", m.header.shape[0], ids.len()),
        });
    }
    if m.header.row_id_digest != row_id_digest(ids) {
        return Err(Error::Alignment {
            what: what.into(),
            detail: "row-id digest differs from the manifest".into(),
        });
    }
    Ok(m.values)
}
