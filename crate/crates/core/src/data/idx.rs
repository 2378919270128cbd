//! IDX container: a big-endian magic `0x000008TT` where `TT` is the
//! number of dimensions (always unsigned bytes here), then one big-endian
//! `u32` per dimension and the raw payload in row-major order.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

/// Decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| {
        Error::Format(format!("truncated header: expected at least {} bytes, got {}", at + 4, bytes.len()))
    })
}

/// Parse an IDX byte buffer, checking the magic against `magic`.
pub fn decode(bytes: &[u8], magic: u32) -> Result<IdxArray> {
    let got = read_u32(bytes, 0)?;
    if got != magic {
        return Err(Error::Format(format!("bad magic 0x{got:08x}, expected 0x{magic:08x}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank).map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let payload: usize = dims.iter().product();
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::Format(format!("payload size mismatch: expected {expected} bytes, got {}", bytes.len())));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

/// Encode an unsigned-byte array.
pub fn encode(array: &IdxArray) -> Vec<u8> {
    let magic = 0x0000_0800 | array.dims.len() as u32;
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Build a single-channel dataset from decoded image (`N x H x W`) and
/// label (`N`) buffers. Pixels keep their raw byte values.
pub fn dataset_from_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = decode(images, IMAGES_MAGIC)?;
    let lab = decode(labels, LABELS_MAGIC)?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!("{} images but {} labels", img.dims[0], lab.dims[0])));
    }
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let x = Tensor::new(alloc::vec![n, 1, h, w], img.data.iter().map(|&b| b as f64).collect())?;
    Dataset::new(x, labels, classes)
}
