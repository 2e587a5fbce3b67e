use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if !is_gz(path) {
        return Ok(raw);
    }
    let mut out = Vec::new();
    GzDecoder::new(raw.as_slice())
        .read_to_end(&mut out)
        .map_err(|e| Error::Format { offset: 0, message: format!("gzip: {e}") })?;
    Ok(out)
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset: offset as u64, message: "truncated header".into() })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let got = be_u32(bytes, 0)?;
    if got != magic {
        return Err(Error::Format { offset: 0, message: format!("bad magic {got:#010x}, expected {magic:#010x}") });
    }
    Ok(())
}

/// Parses an IDX3 image file into `(images scaled to [0,1], rows, cols)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(Matrix, usize, usize)> {
    expect_magic(bytes, IMAGE_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let d = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * d {
        return Err(Error::Format {
            offset: (16 + body.len()) as u64,
            message: format!("truncated: expected {} pixel bytes, found {}", n * d, body.len()),
        });
    }
    let data = body[..n * d].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Matrix::new(n, d, data)?, rows, cols))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    expect_magic(bytes, LABEL_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            offset: (8 + body.len()) as u64,
            message: format!("truncated: expected {n} labels, found {}", body.len()),
        });
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair; files ending in `.gz` are decompressed.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (images, _, _) = read_idx_images(&read_bytes(images_path)?)?;
    let labels = read_idx_labels(&read_bytes(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", images.rows(), labels.len()),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, k)
}

/// Writes a dataset as an IDX pair. Pixels are quantized to bytes, so
/// datasets read by [`load_idx`] round-trip exactly.
pub fn write_idx(images_path: &Path, labels_path: &Path, data: &Dataset, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::shape(format!("{rows}×{cols} images but dimension {}", data.dim())));
    }
    if data.labels.iter().any(|&y| y > 255) {
        return Err(Error::arg("IDX labels must fit in a byte"));
    }
    let mut img = Vec::with_capacity(16 + data.len() * data.dim());
    for v in [IMAGE_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(data.inputs.data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    for v in [LABEL_MAGIC, data.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(data.labels.iter().map(|&y| y as u8));
    write_bytes(images_path, &img)?;
    write_bytes(labels_path, &lab)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}
