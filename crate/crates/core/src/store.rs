//! Fixed little-endian binary formats shared with the feature extractor.
//!
//! Every file starts with a 4-byte magic and a `u32` version (currently 1).
//!
//! - `PWAT` tensor: `C, H, W` as `u32`, then `C*H*W` `f32` activations.
//! - `PWAD` descriptors: `count, dim` as `u32`, then per record the id
//!   length (`u32`), the UTF-8 id bytes, and `dim` `f32` values.
//!
//! Detector sets (`PWAS`) and whitening models (`PWAW`) reuse the header
//! helpers here; their payloads live next to their types.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{validate_activations, FeatureMapTensor};

pub const FORMAT_VERSION: u32 = 1;
pub const TENSOR_MAGIC: [u8; 4] = *b"PWAT";
pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"PWAD";

/// Unit-norm tolerance for descriptors.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// A named descriptor as stored in `PWAD` files.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub image_id: String,
    pub values: Vec<f32>,
}

impl DescriptorRecord {
    pub fn new(image_id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// True when the l2 norm is within [`UNIT_NORM_TOL`] of one.
    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }
}

pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn with_header(magic: [u8; 4]) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Checks magic and version, leaving the cursor at the payload.
    pub(crate) fn with_header(buf: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if found != magic {
            return Err(Error::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        Ok(r)
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or(Error::Truncated(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64_vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::TrailingBytes);
        }
        Ok(())
    }
}

pub(crate) fn to_u32(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidShape(format!("{what} {v} exceeds u32")))
}

pub fn encode_tensor(tensor: &FeatureMapTensor) -> Result<Vec<u8>> {
    validate_activations(tensor.values())?;
    let mut w = ByteWriter::with_header(TENSOR_MAGIC);
    w.u32(to_u32(tensor.channels(), "channels")?);
    w.u32(to_u32(tensor.height(), "height")?);
    w.u32(to_u32(tensor.width(), "width")?);
    for &v in tensor.values() {
        w.f32(v);
    }
    Ok(w.finish())
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMapTensor> {
    let mut r = ByteReader::with_header(bytes, TENSOR_MAGIC)?;
    let c = r.u32("channels")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let n = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::InvalidShape(format!("{c}x{h}x{w} overflows")))?;
    let values = r.f32_vec(n, "tensor payload")?;
    r.finish()?;
    FeatureMapTensor::new(c, h, w, values)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &FeatureMapTensor) -> Result<()> {
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMapTensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn encode_descriptors(records: &[DescriptorRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, DescriptorRecord::dim);
    if let Some(bad) = records.iter().find(|r| r.dim() != dim) {
        return Err(Error::MixedDims {
            first: dim,
            other: bad.dim(),
        });
    }
    let mut w = ByteWriter::with_header(DESCRIPTOR_MAGIC);
    w.u32(to_u32(records.len(), "record count")?);
    w.u32(to_u32(dim, "dim")?);
    for rec in records {
        let id = rec.image_id.as_bytes();
        w.u32(to_u32(id.len(), "id length")?);
        w.bytes(id);
        for &v in &rec.values {
            w.f32(v);
        }
    }
    Ok(w.finish())
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<Vec<DescriptorRecord>> {
    let mut r = ByteReader::with_header(bytes, DESCRIPTOR_MAGIC)?;
    let count = r.u32("record count")? as usize;
    let dim = r.u32("dim")? as usize;
    // Each record needs at least 4 + 4*dim bytes; bound the allocation.
    let min_record = 4 + dim.saturating_mul(4);
    if count.saturating_mul(min_record) > r.remaining() {
        return Err(Error::Truncated("descriptor records"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "image id")?)
            .map_err(|_| Error::InvalidId)?
            .to_owned();
        let values = r.f32_vec(dim, "descriptor values")?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        out.push(DescriptorRecord::new(id, values));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_descriptors(path: impl AsRef<Path>, records: &[DescriptorRecord]) -> Result<()> {
    let bytes = encode_descriptors(records)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<Vec<DescriptorRecord>> {
    decode_descriptors(&fs::read(path)?)
}
