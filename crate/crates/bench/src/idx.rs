//! Reader and writer for the big-endian IDX image container.

use crate::error::DataError;
use sparsecode::Mat;
use std::fs;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;

/// How pixel bytes map to floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PixelScale {
    /// Divide by 255 into `[0, 1]`.
    #[default]
    Unit,
    /// Keep raw byte values `0..=255`.
    Raw,
}

/// Loads an IDX image file (magic `0x00000803`, dimensions N x 28 x 28,
/// unsigned-byte pixels) into an `N x 784` row-major matrix.
pub fn load_mnist_idx(path: &Path, scale: PixelScale) -> Result<Mat, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 4 {
        return Err(DataError::Truncated { expected: 16, found: bytes.len() });
    }
    let be_u32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    let magic = be_u32(0);
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: format!("image magic {IMAGE_MAGIC:#010x}"),
            found: format!("{magic:#010x}"),
        });
    }
    if bytes.len() < 16 {
        return Err(DataError::Truncated { expected: 16, found: bytes.len() });
    }
    let n = be_u32(4) as usize;
    let rows = be_u32(8) as usize;
    let cols = be_u32(12) as usize;
    if rows != 28 || cols != 28 {
        return Err(DataError::DimMismatch {
            detail: format!("expected 28x28 images, found {rows}x{cols}"),
        });
    }
    let expected = 16 + n * 784;
    if bytes.len() != expected {
        return Err(DataError::Truncated { expected, found: bytes.len() });
    }
    let data = bytes[16..]
        .iter()
        .map(|&px| match scale {
            PixelScale::Unit => px as f64 / 255.0,
            PixelScale::Raw => px as f64,
        })
        .collect();
    Ok(Mat::from_vec(n, 784, data))
}

/// Writes an `N x 784` matrix of values in `[0, 1]` as an IDX image file
/// (values scaled by 255 and rounded to bytes).
pub fn write_idx(images: &Mat, path: &Path) -> Result<(), DataError> {
    assert_eq!(images.cols(), 784, "images must be flattened 28x28");
    let n = images.rows();
    let mut bytes = Vec::with_capacity(16 + n * 784);
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(n as u32).to_be_bytes());
    bytes.extend_from_slice(&28u32.to_be_bytes());
    bytes.extend_from_slice(&28u32.to_be_bytes());
    for &v in images.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}
