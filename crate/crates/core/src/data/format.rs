//! `JWF1` feature files: magic, `u32` rows, `u32` cols, then row-major
//! little-endian `f32` values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, Matrix};

pub const FEATURE_MAGIC: &[u8; 4] = b"JWF1";
const HEADER_BYTES: u64 = 12;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Values are narrowed to `f32` on disk.
pub fn write_features(path: &Path, m: &Matrix) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(HEADER_BYTES as usize + m.values().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<Matrix, DataError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if (bytes.len() as u64) < HEADER_BYTES {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_BYTES,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: *FEATURE_MAGIC,
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_BYTES + (rows as u64) * (cols as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values = bytes[HEADER_BYTES as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::new(rows, cols, values)
}
