//! The ConvNet classifier f_c: three conv blocks (3x3 conv, ReLU, 2x2
//! average pool) and a dense head to class logits.

use crate::error::{Error, Result};
use crate::nn::layers::{Conv, Dense};
use crate::nn::ImageShape;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

const BLOCKS: usize = 3;

#[derive(Clone, Debug)]
pub struct ConvNetClassifier {
    image: ImageShape,
    pub class_count: usize,
    blocks: Vec<Conv>,
    head: Dense,
}

impl ConvNetClassifier {
    pub fn init<S: Scalar>(
        g: &mut Graph<S>,
        rng: &mut Rng,
        image: ImageShape,
        class_count: usize,
        width: usize,
    ) -> Result<ConvNetClassifier> {
        if class_count == 0 {
            return Err(Error::contract("classifier", "needs at least one class"));
        }
        if width == 0 {
            return Err(Error::config("classifier_width", "must be >= 1"));
        }
        let (mut h, mut w) = (image.height, image.width);
        let mut blocks = Vec::with_capacity(BLOCKS);
        let mut cin = image.channels;
        for _ in 0..BLOCKS {
            if h < 2 || w < 2 {
                return Err(Error::contract(
                    "classifier",
                    format!(
                        "image {}x{} too small for {BLOCKS} pooling stages",
                        image.height, image.width
                    ),
                ));
            }
            blocks.push(Conv::init(g, rng, cin, width, 3, 1, 1));
            cin = width;
            h /= 2;
            w /= 2;
        }
        let head = Dense::init(g, rng, width * h * w, class_count);
        Ok(ConvNetClassifier {
            image,
            class_count,
            blocks,
            head,
        })
    }

    /// Logits [n x M] for a batch of images in dataset geometry.
    pub fn classify<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || ImageShape::new(xs[1], xs[2], xs[3]) != self.image {
            return Err(Error::shape("classify", &xs, &self.image.batched(0)));
        }
        let mut cur = x;
        for conv in &self.blocks {
            let y = conv.forward(g, cur)?;
            let y = g.relu(y);
            cur = g.avg_pool2(y)?;
        }
        let flat = g.value(cur).numel() / xs[0];
        let cur = g.reshape(cur, &[xs[0], flat])?;
        self.head.forward(g, cur)
    }

    /// Predicted class per row: argmax of the logits (first index wins ties).
    pub fn predict<S: Scalar>(&self, g: &Graph<S>, logits: Var) -> Vec<usize> {
        let t = g.value(logits);
        let m = self.class_count;
        t.data()
            .chunks_exact(m)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = Vec::new();
        for conv in &self.blocks {
            p.extend(conv.params());
        }
        p.extend(self.head.params());
        p
    }
}
