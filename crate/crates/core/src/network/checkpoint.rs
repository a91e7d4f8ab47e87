//! Versioned binary checkpoints.
//!
//! Layout, little endian throughout:
//!
//! ```text
//! magic    8 bytes  "FLEXCKPT"
//! version  u32      1
//! config   u64 length + UTF-8 bytes (resolved run configuration)
//! arch     u64 length + UTF-8 bytes (graph description)
//! params   u64 count + f64 values
//! adam     u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!          u64 count + f64 first moments, u64 count + f64 second moments
//! ```

use std::io::{Read, Write};

use super::adam::AdamState;
use crate::error::{EngineError, Result};

const MAGIC: &[u8; 8] = b"FLEXCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub architecture: String,
    pub params: Vec<f64>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.architecture);
        put_f64s(&mut out, &self.params);
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for v in [self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(EngineError::config("not a flexconv checkpoint"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(EngineError::config(format!("unsupported checkpoint version {version}")));
        }
        let config = r.string()?;
        let architecture = r.string()?;
        let params = r.f64s()?;
        let step = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if r.pos != bytes.len() {
            return Err(EngineError::config("trailing bytes after checkpoint"));
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(EngineError::config("optimizer state does not match parameter count"));
        }
        Ok(Self {
            config,
            architecture,
            params,
            adam: AdamState {
                m,
                v,
                step,
                lr,
                beta1,
                beta2,
                eps,
            },
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EngineError::config("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = usize::try_from(self.u64()?).map_err(|_| EngineError::config("length overflow"))?;
        if n.saturating_mul(elem) > self.bytes.len() - self.pos {
            return Err(EngineError::config("checkpoint is truncated"));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| EngineError::config("checkpoint text is not UTF-8"))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
