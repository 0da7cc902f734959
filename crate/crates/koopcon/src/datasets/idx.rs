//! IDX encoding and decoding (the MNIST/FashionMNIST container format).
//!
//! IDX is big-endian by definition: magic `00 00 <type> <ndim>` followed by
//! one u32 extent per dimension, then the payload. Only the unsigned-byte
//! element type (0x08) is supported, images as 3-D `[n, h, w]` and labels as
//! 1-D `[n]`. Parsing is exact: short payloads and trailing bytes are both
//! errors.

use crate::datasets::LabeledImages;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IDX_UBYTE: u8 = 0x08;
const IMAGE_NDIM: u8 = 3;
const LABEL_NDIM: u8 = 1;

/// Decode an image stream and a label stream into one collection.
///
/// Pixel bytes are scaled by 1/255 into `[0, 1]`; the class count is the
/// largest label plus one.
pub fn parse_idx<S: Scalar>(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledImages<S>> {
    let (img_dims, img_payload) = split_idx(image_bytes, IMAGE_NDIM, "image")?;
    let (lab_dims, lab_payload) = split_idx(label_bytes, LABEL_NDIM, "label")?;
    let (n, h, w) = (img_dims[0], img_dims[1], img_dims[2]);
    if lab_dims[0] != n {
        return Err(Error::Data(format!(
            "idx: {n} images but {} labels",
            lab_dims[0]
        )));
    }
    if n == 0 {
        return Err(Error::Data("idx: empty image file".into()));
    }

    // One byte value -> one float value; a table keeps the hot loop divide-free.
    let lut: Vec<S> = (0..=255u16)
        .map(|b| S::from_f64(f64::from(b) / 255.0))
        .collect();
    let pixels: Vec<S> = img_payload.iter().map(|&b| lut[b as usize]).collect();
    let images = Tensor::from_vec(&[n, 1, h, w], pixels)?;

    let labels: Vec<usize> = lab_payload.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledImages::new(images, labels, class_count, "idx")
}

/// Validate an IDX header and return (extents, payload).
fn split_idx<'a>(bytes: &'a [u8], want_ndim: u8, stream: &str) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(
            0,
            format!(
                "{stream} stream: bad IDX magic {:02X?}, first two bytes must be zero",
                &bytes[..4]
            ),
        ));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::format(
            2,
            format!(
                "{stream} stream: element type 0x{:02X}, only unsigned byte (0x08) is supported",
                bytes[2]
            ),
        ));
    }
    if bytes[3] != want_ndim {
        return Err(Error::format(
            3,
            format!(
                "{stream} stream: {} dimensions, expected {want_ndim}",
                bytes[3]
            ),
        ));
    }
    let ndim = want_ndim as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 4 + 4 * i;
        let v = u32::from_be_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
        dims.push(v as usize);
    }
    let payload: usize = dims.iter().product();
    let expected = header_len + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected,
            format!(
                "{stream} stream: {} trailing bytes after declared payload",
                bytes.len() - expected
            ),
        ));
    }
    Ok((dims, &bytes[header_len..]))
}

/// Encode a single-channel collection back into IDX image/label streams.
///
/// Exact inverse of [`parse_idx`] for data that came from it: scaling by 255
/// and rounding recovers every original byte.
pub fn write_idx<S: Scalar>(data: &LabeledImages<S>) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = data.images.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != 1 {
        return Err(Error::contract(
            "write_idx",
            format!("IDX images are single-channel, got {c} channels"),
        ));
    }
    let mut images = Vec::with_capacity(16 + n * h * w);
    images.extend_from_slice(&[0, 0, IDX_UBYTE, IMAGE_NDIM]);
    for dim in [n, h, w] {
        images.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for &v in data.images.data() {
        images.push((v.as_f64() * 255.0).round() as u8);
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&[0, 0, IDX_UBYTE, LABEL_NDIM]);
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &data.labels {
        if l > 255 {
            return Err(Error::contract(
                "write_idx",
                format!("label {l} does not fit in a byte"),
            ));
        }
        labels.push(l as u8);
    }
    Ok((images, labels))
}
