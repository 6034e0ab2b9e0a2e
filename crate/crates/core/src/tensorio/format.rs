//! `PFT1` tensor files and `PSM1` segmentation-map files.
//!
//! ```text
//! PFT1: "PFT1" | u8 ndim | ndim x u64 dims | f32 payload
//! PSM1: "PSM1" | u8 ndim (= 2) | u64 H | u64 W | u16 n_classes | u16 labels
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use super::types::{SegMap, Tensor};
use crate::error::{PsadError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PFT1";
pub const SEGMAP_MAGIC: &[u8; 4] = b"PSM1";

/// Little-endian cursor over an in-memory byte buffer.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(PsadError::Format(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(PsadError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u64 count that must fit the remaining buffer when multiplied by `elem_size`.
    pub fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| PsadError::Format(format!("count {n} overflows")))?;
        if n.checked_mul(elem_size).is_none() {
            return Err(PsadError::Format(format!("count {n} overflows")));
        }
        Ok(n)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(checked_bytes(n, 4)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(checked_bytes(n, 8)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        let bytes = self.take(checked_bytes(n, 2)?)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(PsadError::Format(format!(
                "{} trailing bytes after payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn checked_bytes(n: usize, size: usize) -> Result<usize> {
    n.checked_mul(size)
        .ok_or_else(|| PsadError::Format(format!("element count {n} overflows")))
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, vs: &[f32]) -> &mut Self {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn u16s(&mut self, vs: &[u16]) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PsadError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| PsadError::io(path, e))
}

fn read_dims(r: &mut ByteReader<'_>) -> Result<Vec<usize>> {
    let ndim = r.u8()? as usize;
    if ndim == 0 {
        return Err(PsadError::Format("ndim must be at least 1".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for _ in 0..ndim {
        let d = r.u64()?;
        let d = usize::try_from(d).map_err(|_| PsadError::Format(format!("dimension {d} overflows")))?;
        if d == 0 {
            return Err(PsadError::Format("zero-sized dimension".into()));
        }
        total = total
            .checked_mul(d)
            .ok_or_else(|| PsadError::Format("element count overflows".into()))?;
        dims.push(d);
    }
    Ok(dims)
}

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(TENSOR_MAGIC).u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u64(d as u64);
    }
    w.f32s(t.data());
    w.into_bytes()
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TENSOR_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let n = dims.iter().product();
    let data = r.f32s(n)?;
    r.finish()?;
    Tensor::new(dims, data)
}

pub fn write_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_tensor(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn encode_segmap(m: &SegMap) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SEGMAP_MAGIC)
        .u8(2)
        .u64(m.height() as u64)
        .u64(m.width() as u64)
        .u16(m.n_classes() as u16)
        .u16s(m.labels());
    w.into_bytes()
}

pub fn decode_segmap(bytes: &[u8]) -> Result<SegMap> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(SEGMAP_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let [h, w] = dims[..] else {
        return Err(PsadError::Format(format!(
            "segmap must be 2-D, got {} dims",
            dims.len()
        )));
    };
    let n_classes = r.u16()? as usize;
    if n_classes == 0 {
        return Err(PsadError::Format("segmap declares zero classes".into()));
    }
    let labels = r.u16s(h * w)?;
    r.finish()?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(PsadError::Format(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    SegMap::new(h, w, n_classes, labels)
}

pub fn write_segmap(m: &SegMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_segmap(m))
}

pub fn read_segmap(path: impl AsRef<Path>) -> Result<SegMap> {
    let path = path.as_ref();
    decode_segmap(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub(crate) fn with_path(e: PsadError, path: &Path) -> PsadError {
    match e {
        PsadError::Format(msg) => PsadError::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}
