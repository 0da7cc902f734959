//! Built-in synthetic dataset: two classes of constant-colored 8x8 images.
//!
//! Class 0 images are grays around 0.25, class 1 around 0.75, with a small
//! deterministic per-image offset so batches are not literally identical
//! (which would degenerate the transport and covariance terms). No RNG: the
//! set is a pure function, identical on every call.

use crate::datasets::LabeledImages;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SIDE: usize = 8;
const PER_CLASS: usize = 32;
const TEST_PER_CLASS: usize = 16;
const BASES: [f64; 2] = [0.25, 0.75];
/// Within-class intensity span; keeps the two classes far apart.
const SPREAD: f64 = 0.2;

fn build<S: Scalar>(per_class: usize, phase: f64, name: &str) -> LabeledImages<S> {
    let mut pixels = Vec::with_capacity(2 * per_class * SIDE * SIDE);
    let mut labels = Vec::with_capacity(2 * per_class);
    for (class, base) in BASES.iter().enumerate() {
        for i in 0..per_class {
            let t = (i as f64 + phase) / per_class as f64 - 0.5;
            let v = S::from_f64(base + SPREAD * t);
            pixels.extend(std::iter::repeat_n(v, SIDE * SIDE));
            labels.push(class);
        }
    }
    let images =
        Tensor::from_vec(&[2 * per_class, 1, SIDE, SIDE], pixels).expect("toy image shape");
    LabeledImages::new(images, labels, 2, name).expect("toy invariants")
}

/// The training split: 32 images per class.
pub fn toy_dataset<S: Scalar>() -> LabeledImages<S> {
    build(PER_CLASS, 0.0, "toy/train")
}

/// A disjoint test split: 16 images per class, offset a quarter step so no
/// intensity collides with the training split (train values have even
/// numerators over 64, test values are 1 mod 4).
pub fn toy_test_dataset<S: Scalar>() -> LabeledImages<S> {
    build(TEST_PER_CLASS, 0.25, "toy/test")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_labels_and_range() {
        let data = toy_dataset::<f64>();
        assert_eq!(data.images.shape(), &[64, 1, 8, 8]);
        assert_eq!(data.class_count, 2);
        assert_eq!(data.class_indices(0).len(), 32);
        assert_eq!(data.class_indices(1).len(), 32);
        data.validate().expect("invariants");
    }

    #[test]
    fn images_are_constant_colored_and_classes_are_separable() {
        let data = toy_dataset::<f64>();
        let px = data.images.data();
        for i in 0..data.len() {
            let img = &px[i * 64..(i + 1) * 64];
            assert!(img.iter().all(|&v| v == img[0]), "image {i} not constant");
            let in_class0 = img[0] < 0.5;
            assert_eq!(in_class0, data.labels[i] == 0, "image {i} mislabeled");
        }
    }

    #[test]
    fn generation_is_pure() {
        let a = toy_dataset::<f32>();
        let b = toy_dataset::<f32>();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn test_split_shares_no_intensity_with_train() {
        let train = toy_dataset::<f64>();
        let test = toy_test_dataset::<f64>();
        assert_eq!(test.images.shape()[0], 32);
        for &tv in test.images.data() {
            assert!(train.images.data().iter().all(|&v| v != tv));
        }
    }
}
