//! Binary weight container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "MANARWTS" (8 bytes) | version | entry count
//! per entry: name length | UTF-8 name | dtype (0 = f32) | rank | dims… | payload
//! ```
//!
//! The payload is `4·Πdims` bytes of row-major little-endian `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MANARWTS";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

/// Named tensors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightContainer {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl WeightContainer {
    pub fn from_params(params: &impl Parameters<Tensor<f32>>) -> Self {
        let mut entries = Vec::new();
        params.visit("", &mut |name, t| entries.push((name, t.clone())));
        WeightContainer { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `params` from the container. Every parameter
    /// must be present with its exact shape; extra entries are an error too.
    pub fn apply_to(&self, params: &mut impl Parameters<Tensor<f32>>) -> Result<()> {
        let mut used = 0;
        let mut err = None;
        params.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.get(&name) {
                Some(src) if src.shape() == t.shape() => {
                    *t = src.clone();
                    used += 1;
                }
                Some(src) => {
                    err = Some(Error::Format(format!(
                        "entry {name}: shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Format(format!("missing entry {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != self.entries.len() {
            return Err(Error::Format(format!(
                "container has {} entries, parameters use {used}",
                self.entries.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.entries.len(), "entry count")?.to_le_bytes());
        let mut seen = std::collections::HashSet::new();
        for (name, t) in &self.entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::Format(format!("duplicate entry {name}")));
            }
            out.extend_from_slice(&u32_of(name.len(), name)?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&DTYPE_F32.to_le_bytes());
            out.extend_from_slice(&u32_of(t.shape().len(), name)?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&u32_of(d, name)?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "header")?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic, not a weight container".into()));
        }
        let version = r.u32("header")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32("header")? as usize;
        let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
        for idx in 0..count {
            let what = format!("entry #{idx}");
            let len = r.u32(&what)? as usize;
            let name = std::str::from_utf8(r.take(len, &what)?)
                .map_err(|_| Error::Format(format!("{what}: name is not UTF-8")))?
                .to_string();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(Error::Format(format!("duplicate entry {name}")));
            }
            let dtype = r.u32(&name)?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("entry {name}: unknown dtype code {dtype}")));
            }
            let rank = r.u32(&name)? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("entry {name}: shape overflows")))?;
            let payload = r.take(numel, &name)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(WeightContainer { entries })
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what}: {v} does not fit in 32 bits")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("{what}: truncated")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_weights(c: &WeightContainer, path: &Path) -> Result<()> {
    std::fs::write(path, c.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<WeightContainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightContainer::decode(&bytes)
}
