//! Self-describing binary checkpoint container.
//!
//! Layout (little endian): magic `SMXCKPT\0`, format version `u32`, block
//! count `u32`, then one index entry per block (name length `u16`, name,
//! kind `u8`, element count `u64`, byte offset `u64`), then the block
//! payloads, then a SHA-256 digest of everything before it.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SMXCKPT\0";
pub const VERSION: u32 = 1;

/// One typed payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Block {
    fn kind(&self) -> u8 {
        match self {
            Block::F64(_) => 0,
            Block::U64(_) => 1,
            Block::Bytes(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Block::F64(v) => v.len(),
            Block::U64(v) => v.len(),
            Block::Bytes(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Block::Bytes(v) => v.len(),
            _ => 8 * self.len(),
        }
    }
}

/// Named blocks, written in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub blocks: BTreeMap<String, Block>,
}

impl Container {
    pub fn insert(&mut self, name: &str, block: Block) {
        self.blocks.insert(name.to_string(), block);
    }

    fn get(&self, name: &str) -> Result<&Block> {
        self.blocks.get(name).ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Block::F64(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("block `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Block::U64(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("block `{name}` is not u64"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Block::Bytes(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("block `{name}` is not bytes"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        let index_len: usize = self.blocks.keys().map(|n| 2 + n.len() + 1 + 8 + 8).sum();
        let mut offset = header.len() + index_len;
        for (name, b) in &self.blocks {
            header.extend_from_slice(&(name.len() as u16).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.push(b.kind());
            header.extend_from_slice(&(b.len() as u64).to_le_bytes());
            header.extend_from_slice(&(offset as u64).to_le_bytes());
            offset += b.byte_len();
        }
        let mut out = header;
        for b in self.blocks.values() {
            match b {
                Block::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Block::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Block::Bytes(v) => out.extend_from_slice(v),
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if buf.len() < 16 + 32 || &buf[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let n = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let mut pos = 16;
        let mut take = |k: usize| -> Result<&[u8]> {
            let s = body.get(pos..pos + k).ok_or_else(|| bad("truncated index"))?;
            pos += k;
            Ok(s)
        };
        let mut out = Container::default();
        for _ in 0..n {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| bad("block name is not UTF-8"))?;
            let kind = take(1)?[0];
            let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let offset = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let width = if kind == 2 { 1 } else { 8 };
            let end = count.checked_mul(width).and_then(|l| l.checked_add(offset)).ok_or_else(|| bad("block size overflow"))?;
            let data = body.get(offset..end).ok_or_else(|| Error::Checkpoint(format!("block `{name}` out of bounds")))?;
            let words = || data.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
            let block = match kind {
                0 => Block::F64(words().map(f64::from_le_bytes).collect()),
                1 => Block::U64(words().map(u64::from_le_bytes).collect()),
                2 => Block::Bytes(data.to_vec()),
                k => return Err(Error::Checkpoint(format!("unknown block kind {k}"))),
            };
            out.blocks.insert(name, block);
        }
        Ok(out)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::default();
        c.insert("x", Block::F64(vec![1.5, f64::NAN, -0.0, f64::MIN_POSITIVE]));
        c.insert("iters", Block::U64(vec![1, u64::MAX]));
        c.insert("meta", Block::Bytes(b"{\"a\":1}".to_vec()));
        c.insert("empty", Block::F64(vec![]));
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        let a: Vec<u64> = back.f64s("x").unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = c.f64s("x").unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.u64s("iters").unwrap(), &[1, u64::MAX]);
        assert_eq!(back.bytes("meta").unwrap(), b"{\"a\":1}");
        assert!(back.f64s("empty").unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let mut buf = sample().to_bytes();
        let n = buf.len();
        buf[n / 2] ^= 1;
        assert!(Container::from_bytes(&buf).is_err());
        assert!(Container::from_bytes(b"nonsense").is_err());
        let mut v = sample().to_bytes();
        v[8] = 9;
        assert!(Container::from_bytes(&v).is_err());
    }
}
