use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::TensorBuffer;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A decoded IDX file: unsigned-byte payload and its dimensions.
#[derive(Debug)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX payload, checking the magic number.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::parse(path, format!("truncated header at byte {}", i * 4)))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(Error::parse(
            path,
            format!("bad magic {magic:#010x}, expected {expected_magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (1..=ndims)
        .map(|i| word(i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 * (ndims + 1);
    let len: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(Error::parse(
            path,
            format!("truncated payload: header promises {len} bytes, found {}", payload.len()),
        ));
    }
    Ok(IdxArray {
        dims,
        data: payload[..len].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an MNIST-style image/label file pair. Pixels are scaled by 1/255
/// and each example has shape `[1, rows, cols]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledSet> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx(&read(images_path)?, IDX_IMAGES_MAGIC, images_path)?;
    let labels = parse_idx(&read(labels_path)?, IDX_LABELS_MAGIC, labels_path)?;
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::parse(
            labels_path,
            format!("{} labels for {n} images", labels.dims[0]),
        ));
    }
    let pixels = rows * cols;
    let features = images
        .data
        .chunks_exact(pixels.max(1))
        .take(n)
        .map(|chunk| {
            TensorBuffer::new(
                vec![1, rows, cols],
                chunk.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = labels.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    LabeledSet::new(features, labels, classes)
}
