//! Versioned binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "FFCDNNM\0"
//! version  u32
//! kind     u8
//! seed     u64
//! config   u32 length + UTF-8 canonical config text
//! params   u64 count + f64 values
//! state    u64 count + f64 values
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{build, ModelKind, Network};
use crate::config::Config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FFCDNNM\0";
pub const FORMAT_VERSION: u32 = 1;

/// Decoded contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub seed: u64,
    pub config: Config,
    pub params: Vec<f64>,
    pub state: Vec<f64>,
}

impl ModelFile {
    pub fn capture(net: &dyn Network, config: &Config) -> Self {
        ModelFile {
            kind: net.kind(),
            seed: config.seed,
            config: config.clone(),
            params: net.params().to_vec(),
            state: net.state(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut b = Vec::with_capacity(64 + text.len() + 8 * (self.params.len() + self.state.len()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(self.kind.code());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(text.len() as u32).to_le_bytes());
        b.extend_from_slice(text.as_bytes());
        for block in [&self.params, &self.state] {
            b.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for v in block.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let kind = ModelKind::from_code(r.take(1)?[0])?;
        let seed = r.u64()?;
        let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| bad("config is not UTF-8"))?;
        let config = Config::from_text(text)?;
        if config.seed != seed {
            return Err(bad("embedded seed disagrees with embedded config"));
        }
        let params = r.f64s()?;
        let state = r.f64s()?;
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(ModelFile {
            kind,
            seed,
            config,
            params,
            state,
        })
    }

    /// Rebuilds the network and installs the stored parameters and state.
    pub fn into_network(self) -> Result<(Box<dyn Network>, Config)> {
        let mut net = build(self.kind, &self.config)?;
        if net.params().len() != self.params.len() {
            return Err(Error::ModelFormat(format!(
                "{} parameters stored, architecture needs {}",
                self.params.len(),
                net.params().len()
            )));
        }
        net.params_mut().copy_from_slice(&self.params);
        net.set_state(&self.state)?;
        Ok((net, self.config))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("truncated".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save(net: &dyn Network, config: &Config, path: &Path) -> Result<()> {
    fs::write(path, ModelFile::capture(net, config).to_bytes())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Box<dyn Network>, Config)> {
    ModelFile::from_bytes(&fs::read(path)?)?.into_network()
}
