//! The autoencoder: strided conv encoder to a d-dimensional latent space and
//! transposed-conv decoder back to image space.
//!
//! Encoder convs are 3x3, stride 2, pad 1, so each halves the spatial extent
//! (rounding up). The decoder retraces that chain exactly: a transposed conv
//! with stride 2, pad 1 and kernel 4 (even target) or 3 (odd target) inverts
//! one halving step for any extent, which is what makes
//! `decode(encode(x))` shape-exact on 28x28 MNIST, 32x32 CIFAR and the 8x8
//! toy images alike.

use crate::error::{Error, Result};
use crate::nn::layers::{Conv, ConvT, Dense};
use crate::nn::ImageShape;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Total conv-layer budget across encoder + decoder: 5, 7 or 9.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthPreset {
    Shallow,
    Medium,
    Deep,
}

impl DepthPreset {
    pub fn parse(name: &str) -> Result<DepthPreset> {
        match name {
            "shallow" => Ok(DepthPreset::Shallow),
            "medium" => Ok(DepthPreset::Medium),
            "deep" => Ok(DepthPreset::Deep),
            other => Err(Error::config(
                "depth_preset",
                format!("unknown preset {other:?}; expected shallow, medium or deep"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DepthPreset::Shallow => "shallow",
            DepthPreset::Medium => "medium",
            DepthPreset::Deep => "deep",
        }
    }

    /// (encoder convs, decoder transposed convs); totals 5/7/9.
    pub fn conv_split(self) -> (usize, usize) {
        match self {
            DepthPreset::Shallow => (3, 2),
            DepthPreset::Medium => (4, 3),
            DepthPreset::Deep => (5, 4),
        }
    }
}

/// Encoder channel widths: base, 2x, then 4x capped.
fn enc_widths(base: usize, depth: usize) -> Vec<usize> {
    (0..depth).map(|i| base << i.min(2)).collect()
}

/// Spatial extents along the encoder: `h`, then ceil-halved per conv.
fn enc_extents(mut h: usize, depth: usize) -> Vec<usize> {
    let mut sizes = vec![h];
    for _ in 0..depth {
        h = h.div_ceil(2);
        sizes.push(h);
    }
    sizes
}

/// Kernel size that makes a stride-2 pad-1 transposed conv hit `target`
/// exactly from `target.div_ceil(2)`.
fn tconv_kernel(target: usize) -> usize {
    if target % 2 == 0 {
        4
    } else {
        3
    }
}

/// The autoencoder pair phi / phi^-1.
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    pub preset: DepthPreset,
    pub latent_dim: usize,
    image: ImageShape,
    enc_convs: Vec<Conv>,
    enc_dense: Dense,
    dec_dense: Dense,
    dec_tconvs: Vec<ConvT>,
    /// Channel/space geometry at the decoder's dense output.
    dec_seed: (usize, usize, usize),
}

impl EncoderDecoder {
    pub fn init<S: Scalar>(
        g: &mut Graph<S>,
        rng: &mut Rng,
        preset: DepthPreset,
        image: ImageShape,
        latent_dim: usize,
        width_base: usize,
    ) -> Result<EncoderDecoder> {
        if latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        if width_base == 0 {
            return Err(Error::config("width_base", "must be >= 1"));
        }
        if latent_dim >= image.numel() {
            return Err(Error::config(
                "latent_dim",
                format!(
                    "latent width {latent_dim} must be smaller than the input dimension {}",
                    image.numel()
                ),
            ));
        }
        let (enc_n, dec_n) = preset.conv_split();
        let widths = enc_widths(width_base, enc_n);
        let heights = enc_extents(image.height, enc_n);
        let wides = enc_extents(image.width, enc_n);

        let mut enc_convs = Vec::with_capacity(enc_n);
        let mut cin = image.channels;
        for &cout in &widths {
            enc_convs.push(Conv::init(g, rng, cin, cout, 3, 2, 1));
            cin = cout;
        }
        let flat = widths[enc_n - 1] * heights[enc_n] * wides[enc_n];
        let enc_dense = Dense::init(g, rng, flat, latent_dim);

        // The decoder ascends the tail of the encoder chain: dec_n transposed
        // convs need dec_n halvings to undo, so it seeds at extent index
        // dec_n with the channel width the encoder had there.
        let dec_seed = (widths[dec_n - 1], heights[dec_n], wides[dec_n]);
        let dec_dense = Dense::init(g, rng, latent_dim, dec_seed.0 * dec_seed.1 * dec_seed.2);
        let mut dec_tconvs = Vec::with_capacity(dec_n);
        for step in (0..dec_n).rev() {
            // step counts down: targets heights[step], channel widths[step-1].
            let cin_t = if step + 1 == dec_n {
                dec_seed.0
            } else {
                widths[step]
            };
            let cout = if step == 0 {
                image.channels
            } else {
                widths[step - 1]
            };
            dec_tconvs.push(ConvT::init(
                g,
                rng,
                cin_t,
                cout,
                tconv_kernel(heights[step]),
                tconv_kernel(wides[step]),
                2,
                1,
            ));
        }
        Ok(EncoderDecoder {
            preset,
            latent_dim,
            image,
            enc_convs,
            enc_dense,
            dec_dense,
            dec_tconvs,
            dec_seed,
        })
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image
    }

    /// Conv layers across encoder + decoder (the preset's 5/7/9).
    pub fn conv_layer_count(&self) -> usize {
        self.enc_convs.len() + self.dec_tconvs.len()
    }

    /// phi: images [n x c x h x w] -> latents [n x d].
    pub fn encode<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || ImageShape::new(xs[1], xs[2], xs[3]) != self.image {
            return Err(Error::shape("encode", &xs, &self.image.batched(0)));
        }
        let mut cur = x;
        for conv in &self.enc_convs {
            let y = conv.forward(g, cur)?;
            cur = g.relu(y);
        }
        let flat = g.value(cur).numel() / xs[0];
        let cur = g.reshape(cur, &[xs[0], flat])?;
        self.enc_dense.forward(g, cur)
    }

    /// phi^-1: latents [k x d] -> images [k x c x h x w] in [0, 1].
    pub fn decode<S: Scalar>(&self, g: &mut Graph<S>, y: Var) -> Result<Var> {
        let ys = g.value(y).shape().to_vec();
        if ys.len() != 2 || ys[1] != self.latent_dim {
            return Err(Error::shape("decode", &ys, &[0, self.latent_dim]));
        }
        let seeded = self.dec_dense.forward(g, y)?;
        let seeded = g.relu(seeded);
        let (c0, h0, w0) = self.dec_seed;
        let mut cur = g.reshape(seeded, &[ys[0], c0, h0, w0])?;
        let last = self.dec_tconvs.len() - 1;
        for (i, tconv) in self.dec_tconvs.iter().enumerate() {
            cur = tconv.forward(g, cur)?;
            cur = if i == last { g.sigmoid(cur) } else { g.relu(cur) };
        }
        Ok(cur)
    }

    /// Parameters of the encoder half (phi) only.
    pub fn encoder_params(&self) -> Vec<Var> {
        let mut p = Vec::new();
        for conv in &self.enc_convs {
            p.extend(conv.params());
        }
        p.extend(self.enc_dense.params());
        p
    }

    /// Parameters of the decoder half (phi^-1) only.
    pub fn decoder_params(&self) -> Vec<Var> {
        let mut p = Vec::new();
        p.extend(self.dec_dense.params());
        for tconv in &self.dec_tconvs {
            p.extend(tconv.params());
        }
        p
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = self.encoder_params();
        p.extend(self.decoder_params());
        p
    }
}
