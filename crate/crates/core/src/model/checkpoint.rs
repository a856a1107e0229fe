//! `.tlpckpt` container.
//!
//! Layout (little-endian): magic `TLPC`, u32 format version, u32 length of
//! the UTF-8 JSON config snapshot, the snapshot, u32 tensor count, then per
//! tensor a u32 name length, the name and a TLPT blob. Tensors are stored in
//! name order with `gen/` and `disc/` prefixes, so equal states give equal
//! bytes.

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DiscriminatorConfig, DiscriminatorState, GeneratorConfig, GeneratorState};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::params::ParamSet;
use crate::tensor::io as tio;

pub const MAGIC: &[u8; 4] = b"TLPC";
pub const VERSION: u32 = 1;

const GEN: &str = "gen/";
const DISC: &str = "disc/";

/// Everything a checkpoint holds. `meta` is free-form provenance (epoch,
/// training configuration, …) carried along in the snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: GeneratorState,
    pub discriminator: Option<DiscriminatorState>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(generator: GeneratorState) -> Self {
        Self { generator, discriminator: None, meta: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.generator.params.check_finite()?;
        let snap = Snapshot {
            generator: self.generator.config.clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.config.clone()),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&snap)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut tensors: Vec<(String, &crate::Tensor)> = Vec::new();
        tensors.extend(self.generator.params.iter().map(|(k, t)| (format!("{GEN}{k}"), t)));
        if let Some(d) = &self.discriminator {
            d.params.check_finite()?;
            tensors.extend(d.params.iter().map(|(k, t)| (format!("{DISC}{k}"), t)));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            tio::write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, origin, "magic")?;
        if &magic != MAGIC {
            return Err(Error::corrupt(origin, "not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r, origin, "version")?;
        if version != VERSION {
            return Err(Error::FormatVersionMismatch { found: version, expected: VERSION });
        }
        let json_len = read_u32(&mut r, origin, "snapshot length")? as usize;
        if json_len > bytes.len() {
            return Err(Error::corrupt(origin, "snapshot length exceeds file"));
        }
        let mut json = vec![0u8; json_len];
        read_exact(&mut r, &mut json, origin, "snapshot")?;
        let snap: Snapshot = serde_json::from_slice(&json)
            .map_err(|e| Error::corrupt(origin, format!("config snapshot: {e}")))?;
        let count = read_u32(&mut r, origin, "tensor count")?;
        let mut gen = ParamSet::new();
        let mut disc = ParamSet::new();
        for _ in 0..count {
            let n = read_u32(&mut r, origin, "name length")? as usize;
            if n > bytes.len() {
                return Err(Error::corrupt(origin, "name length exceeds file"));
            }
            let mut name = vec![0u8; n];
            read_exact(&mut r, &mut name, origin, "name")?;
            let name = String::from_utf8(name).map_err(|_| Error::corrupt(origin, "tensor name is not UTF-8"))?;
            let t = tio::read_tensor(&mut r, origin)?;
            if let Some(k) = name.strip_prefix(GEN) {
                gen.insert(k, t);
            } else if let Some(k) = name.strip_prefix(DISC) {
                disc.insert(k, t);
            } else {
                return Err(Error::corrupt(origin, format!("unexpected tensor {name}")));
            }
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::corrupt(origin, "trailing bytes"));
        }
        let generator = GeneratorState::from_params(snap.generator, gen)?;
        let discriminator = match snap.discriminator {
            Some(c) => Some(DiscriminatorState::from_params(c, disc)?),
            None if disc.is_empty() => None,
            None => return Err(Error::corrupt(origin, "discriminator tensors without config")),
        };
        Ok(Self { generator, discriminator, meta: snap.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads a checkpoint but checks its generator against an expected
    /// configuration.
    pub fn load_expecting(path: &Path, expected: &GeneratorConfig) -> Result<Self> {
        let mut ck = Self::load(path)?;
        let params = std::mem::take(&mut ck.generator.params);
        ck.generator = GeneratorState::from_params(expected.clone(), params)?;
        Ok(ck)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8], origin: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::corrupt(origin, format!("truncated {what}")))
}

fn read_u32(r: &mut Cursor<&[u8]>, origin: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, origin, what)?;
    Ok(u32::from_le_bytes(b))
}
