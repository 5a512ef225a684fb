//! `BDXW` weight files.
//!
//! ```text
//! "BDXW"  u32 LE tensor count
//! per tensor: u16 LE name length, UTF-8 name, u8 rank, rank x u32 LE dims,
//!             product(dims) x f64 LE values
//! ```

use std::fs;
use std::path::Path;

use super::{Parameterized, Tensor};
use crate::{Error, Result};

pub const BDXW_MAGIC: &[u8; 4] = b"BDXW";

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(BDXW_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        let len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Format(format!("tensor rank too large: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("BDXW payload truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != BDXW_MAGIC {
        return Err(Error::Format("bad BDXW magic".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after BDXW tensors".into()));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Every parameter (trainable or not) of a model, in visiting order.
pub fn collect<M: Parameterized + ?Sized>(model: &M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit(&mut |p| out.push((p.name.clone(), p.value.clone())));
    out
}

/// Overwrites model parameters from named tensors; every parameter must be present
/// with a matching shape.
pub fn restore<M: Parameterized + ?Sized>(model: &mut M, tensors: &[(String, Tensor)]) -> Result<()> {
    let map: std::collections::HashMap<&str, &Tensor> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut err = None;
    model.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match map.get(p.name.as_str()) {
            Some(t) if t.shape() == p.value.shape() => p.value = (*t).clone(),
            Some(t) => {
                err = Some(Error::Shape(format!(
                    "checkpoint tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )))
            }
            None => err = Some(Error::Persistence(format!("checkpoint lacks {}", p.name))),
        }
    });
    err.map_or(Ok(()), Err)
}
