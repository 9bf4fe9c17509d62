//! Versioned little-endian parameter container.
//!
//! Layout: magic `PCSC`, version `u32`, entry count `u32`, then per entry a
//! `u16` name length, the UTF-8 name, `u32` rows, `u32` cols and
//! `rows × cols` IEEE-754 `f64` values in row-major order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::nn::{Matrix, Parameterized};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCSC";
pub const VERSION: u32 = 1;

pub fn encode<'a, I>(entries: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a Matrix)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {} bytes", name.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Matrix)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("name is not UTF-8".to_string()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: implausible shape {rows}×{cols}")))?;
        let raw = r.take(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Matrix::from_vec(rows, cols, values)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Encodes every parameter of `model` under its own name.
pub fn encode_params<M: Parameterized + ?Sized>(model: &M) -> Result<Vec<u8>> {
    let params = model.params();
    encode(params.iter().map(|p| (p.name(), &p.value)))
}

/// Copies decoded entries into `model`'s parameters by name. Every parameter
/// must be present with a matching shape; unknown entries are returned.
pub fn load_params<M: Parameterized + ?Sized>(
    model: &mut M,
    entries: Vec<(String, Matrix)>,
) -> Result<Vec<(String, Matrix)>> {
    let mut rest = entries;
    for p in model.params_mut() {
        let idx = rest
            .iter()
            .position(|(n, _)| n == p.name())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name())))?;
        let (_, m) = rest.swap_remove(idx);
        if m.shape() != p.shape() {
            return Err(Error::shape("checkpoint load", m.shape(), p.shape()));
        }
        p.value = m;
    }
    Ok(rest)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
