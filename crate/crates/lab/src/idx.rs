//! IDX (MNIST-style) file loading.

use std::path::Path;

use sfl_core::data::{self, Dataset};

use crate::error::{LabError, Result};

/// Reads an image file and a label file; images come out as `[N, 1, rows, cols]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| LabError::io(images, e))?;
    let lbl = std::fs::read(labels).map_err(|e| LabError::io(labels, e))?;
    Ok(data::parse_idx(&img, &lbl)?)
}

/// Big-endian IDX encodings of `images` (`[n][rows·cols]` bytes) and labels.
pub fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0803u32.to_be_bytes());
    for d in [images.len(), rows, cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&0x0801u32.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    (img, lbl)
}
