//! Binary PGM (P5, maxval 255) for masks: 0 is background, 255 foreground.
//! On read, any sample ≥ 128 counts as foreground.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fpg::Mask;
use crate::fsutil;

pub fn encode(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.cells().iter().map(|&c| if c == 1 { 255u8 } else { 0 }));
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Mask> {
    let corrupt = |why: &str| Error::corrupt(origin, why);
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| corrupt("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(corrupt("not a binary PGM (expected P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| corrupt("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(corrupt("only maxval 255 is supported"));
    }
    if w == 0 || h == 0 {
        return Err(corrupt("zero extent"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| corrupt("truncated raster"))?;
    let cells = raster.iter().map(|&v| (v >= 128) as u8).collect();
    Mask::from_cells(h, w, cells)
}

pub fn save(path: &Path, mask: &Mask) -> Result<()> {
    fsutil::write_atomic(path, &encode(mask))
}

pub fn load(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
