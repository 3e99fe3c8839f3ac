//! IDX binary format: big-endian magic and dimension sizes, then raw
//! `u8` payload. Image files use magic `0x00000803` (3 dims), label files
//! `0x00000801` (1 dim). Images are scaled by 1/255 into `[0, 1]` on
//! decode.

use crate::data::DataError;
use crate::linalg::Mat;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], off: usize) -> Result<u32, DataError> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(DataError::TruncatedFile {
            expected: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[off..end].try_into().unwrap()))
}

/// Decodes an image tensor: returns the `N×(rows·cols)` matrix in
/// `[0, 1]` plus the image height and width.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Mat, usize, usize), DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let h = read_u32_be(bytes, 8)? as usize;
    let w = read_u32_be(bytes, 12)? as usize;
    let payload = n * h * w;
    let expected = 16 + payload;
    if bytes.len() < expected {
        return Err(DataError::TruncatedFile {
            expected,
            got: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Mat::from_vec(n, h * w, data), h, w))
}

/// Decodes a label vector.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(DataError::TruncatedFile {
            expected,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Encodes raw `u8` pixels (`N×h·w`, row-major) as an IDX image file.
pub fn write_idx_images(pixels: &[u8], n: usize, h: usize, w: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), n * h * w);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Encodes labels as an IDX label file.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
