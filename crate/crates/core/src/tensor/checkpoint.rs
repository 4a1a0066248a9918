//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LFA1"
//! u64 parameter count
//! per parameter:
//!     u32 name length, UTF-8 name bytes
//!     u32 rank, rank × u64 dims
//!     numel × f32 data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFA1";

pub fn write_checkpoint<W: Write>(params: &ParamStore<f32>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.numel() * 4);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Format(format!("truncated while reading {what}: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let magic: [u8; 4] = read_exact(&mut r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let count = u64::from_le_bytes(read_exact(&mut r, "parameter count")?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| TensorError::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Format(format!("name not UTF-8: {e}")))?;
        let rank = u32::from_le_bytes(read_exact(&mut r, "rank")?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(&mut r, "dim")?) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Format(format!("shape {shape:?} overflows")))?;
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|e| TensorError::Format(format!("truncated data for {name:?}: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format("trailing bytes after last parameter".into()));
    }
    Ok(store)
}

/// Writes atomically: the checkpoint lands under a temporary name and is
/// renamed into place once complete.
pub fn save_checkpoint(params: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    crate::fsutil::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
