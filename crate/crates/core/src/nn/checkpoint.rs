//! Binary checkpoint format.
//!
//! ```text
//! "SVSCKPT"            7 bytes
//! version              u32
//! training_step        u64
//! rng_state            u32 length + bytes
//! metadata             u32 length + UTF-8 bytes (model config as JSON)
//! record count         u32
//! records              u32 name length, name, u32 rank, u32 dims…, f32 data
//! optimiser flag       u8, 0 or 1
//!   optimiser step     u64
//!   first moments      record count + records
//!   second moments     record count + records
//! crc32                u32 over everything above
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::layers::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"SVSCKPT";
pub const FORMAT_VERSION: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub training_step: u64,
    pub rng_state: Vec<u8>,
    pub metadata: String,
    /// Adam moments, so that a resumed run continues the same trajectory.
    pub optimizer: Option<OptimizerState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_version(FORMAT_VERSION)
    }

    pub(crate) fn to_bytes_with_version(&self, version: u32) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 4 * self.params.num_elements());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&version.to_le_bytes());
        b.extend_from_slice(&self.training_step.to_le_bytes());
        put_bytes(&mut b, &self.rng_state);
        put_bytes(&mut b, self.metadata.as_bytes());
        put_records(&mut b, &self.params);
        match &self.optimizer {
            None => b.push(0),
            Some(o) => {
                b.push(1);
                b.extend_from_slice(&o.step.to_le_bytes());
                put_records(&mut b, &o.m);
                put_records(&mut b, &o.v);
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut r = Reader::new(&bytes[MAGIC.len()..]);
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checksum mismatch (corrupt or truncated)".into()));
        }

        let mut r = Reader::new(&body[MAGIC.len() + 4..]);
        let training_step = r.u64()?;
        let rng_state = r.bytes()?.to_vec();
        let metadata = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let params = r.records()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(OptimizerState {
                step: r.u64()?,
                m: r.records()?,
                v: r.records()?,
            }),
            f => return Err(Error::Format(format!("bad optimiser flag {f}"))),
        };
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after records".into()));
        }
        Ok(Self {
            params,
            training_step,
            rng_state,
            metadata,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_records(b: &mut Vec<u8>, store: &ParamStore<f32>) {
    b.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_bytes(b, name.as_bytes());
        b.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn put_bytes(b: &mut Vec<u8>, data: &[u8]) {
    b.extend_from_slice(&(data.len() as u32).to_le_bytes());
    b.extend_from_slice(data);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn records(&mut self) -> Result<ParamStore<f32>> {
        let count = self.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(self.bytes()?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("oversized record".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&shape, data)
                .map_err(|e| Error::Format(format!("record '{name}': {e}")))?;
            if store.contains(&name) {
                return Err(Error::Format(format!("duplicate record '{name}'")));
            }
            store.insert(name, t);
        }
        Ok(store)
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
