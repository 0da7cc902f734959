//! CIFAR-10 binary batch decoding.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes in
//! channel-planar order (the full red plane, then green, then blue, each
//! 32x32 row-major). That matches this crate's `[c, h, w]` layout directly.

use crate::datasets::LabeledImages;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;
const CLASSES: usize = 10;

/// Decode one CIFAR-10 binary batch.
pub fn parse_cifar10<S: Scalar>(batch_bytes: &[u8]) -> Result<LabeledImages<S>> {
    if batch_bytes.is_empty() {
        return Err(Error::Data("cifar10: empty batch".into()));
    }
    let n = batch_bytes.len() / RECORD_BYTES;
    let rem = batch_bytes.len() % RECORD_BYTES;
    if rem != 0 {
        return Err(Error::format(
            n * RECORD_BYTES,
            format!(
                "cifar10 batch is {} bytes = {n} records of {RECORD_BYTES} plus {rem} stray bytes",
                batch_bytes.len()
            ),
        ));
    }
    let lut: Vec<S> = (0..=255u16)
        .map(|b| S::from_f64(f64::from(b) / 255.0))
        .collect();
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (rec, chunk) in batch_bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = chunk[0] as usize;
        if label >= CLASSES {
            return Err(Error::Data(format!(
                "cifar10 record {rec}: label byte {label} outside [0, {CLASSES})"
            )));
        }
        labels.push(label);
        pixels.extend(chunk[1..].iter().map(|&b| lut[b as usize]));
    }
    let images = Tensor::from_vec(&[n, 3, 32, 32], pixels)?;
    LabeledImages::new(images, labels, CLASSES, "cifar10")
}
