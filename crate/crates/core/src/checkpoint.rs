//! Binary parameter checkpoints.
//!
//! Layout, all integers `u32` little-endian and all values `f64` little-endian:
//!
//! ```text
//! magic       4 bytes  "MPCK"
//! version     u32      1
//! input       u32      network input dimension
//! hidden      u32      LSTM units
//! actions     u32      policy outputs
//! tensors     u32      number of tensors that follow (7)
//! per tensor:
//!   name_len  u32
//!   name      name_len bytes, UTF-8
//!   ndim      u32
//!   dims      ndim × u32
//!   values    prod(dims) × f64, row-major
//! ```
//!
//! Tensor names and order: `lstm.w_input [4H, D]`, `lstm.w_hidden [4H, H]`,
//! `lstm.bias [4H]`, `policy.weight [A, H]`, `policy.bias [A]`,
//! `value.weight [1, H]`, `value.bias [1]`. LSTM gate blocks are stacked
//! input, forget, candidate, output.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{AgentParams, NetDims, TENSOR_NAMES};

const MAGIC: &[u8; 4] = b"MPCK";
const VERSION: u32 = 1;

pub fn to_bytes(p: &AgentParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * p.param_count());
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        p.dims.input as u32,
        p.dims.hidden as u32,
        p.dims.actions as u32,
        TENSOR_NAMES.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in p.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for x in t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
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
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s: &'a [u8] = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<AgentParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = NetDims {
        input: r.u32()?,
        hidden: r.u32()?,
        actions: r.u32()?,
    };
    let count = r.u32()?;
    if count != TENSOR_NAMES.len() {
        return Err(Error::Checkpoint(format!("expected 7 tensors, found {count}")));
    }
    let mut p = AgentParams::zeros(dims);
    let shapes = AgentParams::shapes(dims);
    for (i, slot) in p.slices_mut().into_iter().enumerate() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != TENSOR_NAMES[i] {
            return Err(Error::Checkpoint(format!(
                "expected tensor {}, found {name}",
                TENSOR_NAMES[i]
            )));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != shapes[i] {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                shapes[i]
            )));
        }
        for v in slot.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(p)
}

pub fn save(path: &Path, p: &AgentParams) -> Result<()> {
    std::fs::write(path, to_bytes(p))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<AgentParams> {
    from_bytes(&std::fs::read(path)?)
}
