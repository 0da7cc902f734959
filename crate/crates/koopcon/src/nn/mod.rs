//! Learnable components: autoencoder, self-attention condenser head, and
//! the ConvNet classifier.
//!
//! Layers hold graph [`Var`](crate::tensor::Var) handles to their parameter
//! leaves plus enough shape metadata to validate inputs; the tensors behind
//! the handles live in the graph so one `AdamState` can update everything.

pub mod autoencoder;
pub mod classifier;
pub mod head;
pub mod layers;

pub use autoencoder::{DepthPreset, EncoderDecoder};
pub use classifier::ConvNetClassifier;
pub use head::CondenserHead;
pub use layers::{Conv, ConvT, Dense};

/// Geometry of a single image, `[c, h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> ImageShape {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn numel(self) -> usize {
        self.channels * self.height * self.width
    }

    /// Batch shape for `n` images of this geometry.
    pub fn batched(self, n: usize) -> [usize; 4] {
        [n, self.channels, self.height, self.width]
    }
}
