//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "STEFNET\0"
//! version  u32      currently 1
//! cfg_len  u32      length of the JSON-encoded ModelConfig
//! cfg      cfg_len bytes
//! count    u32      number of parameter blobs
//! per parameter:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u32 × rank
//!   data     f64 LE × product(dims)
//! ```
//!
//! The config header makes a checkpoint self-describing: loading rebuilds
//! the architecture and then overwrites every parameter, so a save/load
//! round trip restores the model bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ModelConfig, StefNet};

const MAGIC: &[u8; 8] = b"STEFNET\0";
const VERSION: u32 = 1;

pub fn save_bytes(net: &StefNet) -> Vec<u8> {
    let cfg = serde_json::to_vec(net.config()).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    for p in net.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_bytes(bytes: &[u8]) -> Result<StefNet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_bytes = r.take(cfg_len)?;
    let config: ModelConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| Error::Format(format!("bad config header: {e}")))?;

    // Rebuild the architecture from the embedded config; the RNG values are
    // immediately overwritten by the stored blobs.
    let mut net = StefNet::new(config, &mut ChaCha20Rng::seed_from_u64(0))?;

    let count = r.u32()? as usize;
    if count != net.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, architecture expects {}",
            net.params().len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last parameter",
            bytes.len() - r.pos
        )));
    }

    // Validate everything before touching the model: no partial loads.
    for (p, (name, value)) in net.params().iter().zip(&loaded) {
        if &p.name != name {
            return Err(Error::Format(format!(
                "parameter order mismatch: checkpoint has '{name}', architecture \
                 expects '{}'",
                p.name
            )));
        }
        if p.value.shape() != value.shape() {
            return Err(Error::Format(format!(
                "parameter '{name}' has shape {:?}, architecture expects {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
    }
    for (p, (_, value)) in net.params_mut().iter_mut().zip(loaded) {
        p.value = value;
    }
    Ok(net)
}

pub fn save_file(net: &StefNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_bytes(net))?;
    Ok(())
}

pub fn load_file(path: impl AsRef<Path>) -> Result<StefNet> {
    let bytes = std::fs::read(path)?;
    load_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}
