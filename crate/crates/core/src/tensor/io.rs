//! TLPT tensor files: magic `TLPT`, `u32` rank, `rank × u32` extents, then
//! row-major `f32` values. Every integer and float is little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"TLPT";

pub fn write_tensor<W: Write>(out: &mut W, t: &Tensor) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

/// Reads one tensor; `origin` only labels errors.
pub fn read_tensor<R: Read>(input: &mut R, origin: &Path) -> Result<Tensor> {
    let corrupt = |why: &str| Error::corrupt(origin, why);
    let mut word = [0u8; 4];
    input
        .read_exact(&mut word)
        .map_err(|_| corrupt("missing magic"))?;
    if &word != MAGIC {
        return Err(corrupt("bad magic, expected TLPT"));
    }
    input.read_exact(&mut word).map_err(|_| corrupt("missing rank"))?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank > 8 {
        return Err(corrupt(&format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input.read_exact(&mut word).map_err(|_| corrupt("truncated extents"))?;
        let d = u32::from_le_bytes(word) as usize;
        if d == 0 {
            return Err(corrupt("zero extent"));
        }
        shape.push(d);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw).map_err(|_| corrupt("truncated data"))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    fsutil::write_atomic(path, &to_bytes(t))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor, path)?;
    if !cursor.is_empty() {
        return Err(Error::corrupt(path, "trailing bytes after tensor data"));
    }
    Ok(t)
}
