//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "JWCK"  u32 version  u32 count
//! count x { u16 name_len, name bytes, u8 rank, rank x u32 dim, f64 values }
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams, NetError};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"JWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated or unreadable: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model: {0}")]
    Incompatible(#[from] NetError),
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<(), CheckpointError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| CheckpointError::Malformed(format!("name too long: {name}")))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams, CheckpointError> {
    let magic = read_array::<4, _>(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| CheckpointError::Malformed(format!("parameter name: {e}")))?;
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| read_array(&mut r).map(|b| u32::from_le_bytes(b) as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let t = Tensor::new(shape, values).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate parameter `{name}`")));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

/// Reads a checkpoint and checks it against `config`.
pub fn load_checkpoint(path: &Path, config: &ModelConfig) -> Result<ModelParams, CheckpointError> {
    let params = read_checkpoint(BufReader::new(File::open(path)?))?;
    params.validate(config)?;
    Ok(params)
}
