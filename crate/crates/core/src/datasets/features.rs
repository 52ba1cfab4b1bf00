//! `SFTV` feature files.
//!
//! ```text
//! "SFTV" | n u32 | dim u32 | n*dim f32 row-major | n label bytes
//! ```
//! Little-endian. Values are stored as `f32`, so matrices whose entries are
//! `f32`-representable round trip exactly.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE, WriteBytesExt};
use ndarray::Array2;

use super::{io_err, DatasetError};

const MAGIC: &[u8; 4] = b"SFTV";
const HEADER: usize = 12;

pub fn encode_features(matrix: &Array2<f64>, labels: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let (n, dim) = matrix.dim();
    if n != labels.len() {
        return Err(DatasetError::LengthMismatch {
            rows: n,
            labels: labels.len(),
        });
    }
    let mut out = Vec::with_capacity(HEADER + 4 * n * dim + n);
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(n as u32).unwrap();
    out.write_u32::<LE>(dim as u32).unwrap();
    for &v in matrix.iter() {
        out.write_f32::<LE>(v as f32).unwrap();
    }
    out.extend_from_slice(labels);
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<(Array2<f64>, Vec<u8>), DatasetError> {
    let corrupt = |m: String| DatasetError::CorruptFile(m);
    if bytes.len() < HEADER {
        return Err(corrupt("truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic, expected SFTV".into()));
    }
    let n = LE::read_u32(&bytes[4..8]) as usize;
    let dim = LE::read_u32(&bytes[8..12]) as usize;
    let expected = (n as u128) * (dim as u128) * 4 + n as u128 + HEADER as u128;
    if bytes.len() as u128 != expected {
        return Err(corrupt(format!(
            "length {} does not match n={n}, dim={dim} (expected {expected})",
            bytes.len()
        )));
    }
    let body = &bytes[HEADER..HEADER + 4 * n * dim];
    let values: Vec<f64> = body.chunks_exact(4).map(|c| LE::read_f32(c) as f64).collect();
    let labels = bytes[HEADER + 4 * n * dim..].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(corrupt(format!("label byte {bad} is not 0 or 1")));
    }
    let matrix = Array2::from_shape_vec((n, dim), values).expect("length checked above");
    Ok((matrix, labels))
}

pub fn write_features(
    matrix: &Array2<f64>,
    labels: &[u8],
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = encode_features(matrix, labels)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<(Array2<f64>, Vec<u8>), DatasetError> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(io_err(path))?)
}
