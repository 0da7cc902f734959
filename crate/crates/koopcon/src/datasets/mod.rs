//! Dataset ingestion and per-class batch assembly.
//!
//! Images always live in `[n x c x h x w]` tensors with values in `[0, 1]`;
//! labels are plain class indices. Parsers are strict: they validate headers,
//! refuse truncated or oversized payloads, and never read past the declared
//! extent, so fuzzed inputs fail with errors rather than producing garbage.

pub mod cifar;
pub mod idx;
pub mod toy;

pub use cifar::parse_cifar10;
pub use idx::{parse_idx, write_idx};
pub use toy::{toy_dataset, toy_test_dataset};

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A labeled image collection: the real dataset X.
#[derive(Clone, Debug)]
pub struct LabeledImages<S> {
    /// [n x c x h x w], values in [0, 1].
    pub images: Tensor<S>,
    /// One class index per image, each < `class_count`.
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub source_name: String,
}

impl<S: Scalar> LabeledImages<S> {
    pub fn new(
        images: Tensor<S>,
        labels: Vec<usize>,
        class_count: usize,
        source_name: impl Into<String>,
    ) -> Result<LabeledImages<S>> {
        let data = LabeledImages {
            images,
            labels,
            class_count,
            source_name: source_name.into(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (channels, height, width) of a single image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Source indices of every sample of `class_id`, in dataset order.
    pub fn class_indices(&self, class_id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Gather a sub-collection by source indices (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Result<LabeledImages<S>> {
        let stride = self.images.numel() / self.len().max(1);
        let src = self.images.data();
        let mut images = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(
                    "select",
                    format!("index {i} out of range for {} samples", self.len()),
                ));
            }
            images.extend_from_slice(&src[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok(LabeledImages {
            images: Tensor::from_vec(&shape, images)?,
            labels,
            class_count: self.class_count,
            source_name: self.source_name.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.images.shape();
        if s.len() != 4 {
            return Err(Error::contract(
                "labeled_images",
                format!("images must be rank 4 [n,c,h,w], got {s:?}"),
            ));
        }
        if s[0] != self.labels.len() {
            return Err(Error::Data(format!(
                "{}: {} images but {} labels",
                self.source_name,
                s[0],
                self.labels.len()
            )));
        }
        if self.class_count == 0 {
            return Err(Error::Data(format!(
                "{}: class count must be positive",
                self.source_name
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Data(format!(
                "{}: label {bad} out of range for {} classes",
                self.source_name, self.class_count
            )));
        }
        for &v in self.images.data() {
            let f = v.as_f64();
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Data(format!(
                    "{}: pixel value {f} outside [0,1]",
                    self.source_name
                )));
            }
        }
        Ok(())
    }
}

/// A fixed-size same-class sample: the per-class X of Algorithm 1's loop.
#[derive(Clone, Debug)]
pub struct ClassBatch<S> {
    pub class_id: usize,
    /// [n_b x c x h x w].
    pub images: Tensor<S>,
    /// Source index of each row in the originating collection.
    pub sample_indices: Vec<usize>,
}

/// Draw exactly `n_b` samples of one class, seeded.
///
/// Classes with at least `n_b` samples are drawn without replacement;
/// smaller classes fall back to replacement so the batch size (and with it
/// the shape of the condensation map T) never varies.
pub fn class_batch<S: Scalar>(
    data: &LabeledImages<S>,
    class_id: usize,
    n_b: usize,
    seed: u64,
) -> Result<ClassBatch<S>> {
    if n_b == 0 {
        return Err(Error::contract("class_batch", "batch size must be >= 1"));
    }
    let pool = data.class_indices(class_id);
    if pool.is_empty() {
        return Err(Error::Data(format!(
            "{}: class {class_id} has no samples",
            data.source_name
        )));
    }
    let mut rng = Rng::new(seed);
    let sample_indices: Vec<usize> = if pool.len() >= n_b {
        rng.sample_distinct(pool.len(), n_b)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..n_b).map(|_| pool[rng.index(pool.len())]).collect()
    };
    let subset = data.select(&sample_indices)?;
    Ok(ClassBatch {
        class_id,
        images: subset.images,
        sample_indices,
    })
}

/// Split off a seeded subset with exactly `per_class` samples of every class;
/// the complement is returned as the second collection.
pub fn holdout_split<S: Scalar>(
    data: &LabeledImages<S>,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledImages<S>, LabeledImages<S>)> {
    if per_class == 0 {
        return Err(Error::contract("holdout_split", "per_class must be >= 1"));
    }
    let mut rng = Rng::new(seed);
    let mut chosen = vec![false; data.len()];
    let mut subset_idx = Vec::with_capacity(per_class * data.class_count);
    for class_id in 0..data.class_count {
        let pool = data.class_indices(class_id);
        if pool.len() < per_class {
            return Err(Error::Data(format!(
                "{}: class {class_id} has {} samples, need {per_class}",
                data.source_name,
                pool.len()
            )));
        }
        let mut picks: Vec<usize> = rng
            .sample_distinct(pool.len(), per_class)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picks.sort_unstable();
        for &i in &picks {
            chosen[i] = true;
        }
        subset_idx.extend(picks);
    }
    let rest_idx: Vec<usize> = (0..data.len()).filter(|&i| !chosen[i]).collect();
    Ok((data.select(&subset_idx)?, data.select(&rest_idx)?))
}

/// The datasets this crate can load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
    Toy,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<DatasetKind> {
        match name {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashionmnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "toy" => Ok(DatasetKind::Toy),
            other => Err(Error::config(
                "dataset",
                format!("unknown dataset {other:?}; expected mnist, fashionmnist, cifar10 or toy"),
            )),
        }
    }

    /// Subdirectory of the data root holding this dataset's files.
    fn subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashionmnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Toy => "toy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Load one split of a dataset from `data_root/<dataset>/`.
///
/// IDX files are found under their official names with or without a `.gz`
/// suffix; gzip is detected by content, not extension. The toy dataset is
/// generated in code and needs no files.
pub fn load_split<S: Scalar>(
    kind: DatasetKind,
    data_root: &Path,
    split: Split,
) -> Result<LabeledImages<S>> {
    match kind {
        DatasetKind::Toy => Ok(match split {
            Split::Train => toy::toy_dataset(),
            Split::Test => toy::toy_test_dataset(),
        }),
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let dir = data_root.join(kind.subdir());
            let (img, lab) = match split {
                Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            };
            let images = read_maybe_gz(&resolve(&dir, img)?)?;
            let labels = read_maybe_gz(&resolve(&dir, lab)?)?;
            let mut data = parse_idx::<S>(&images, &labels)?;
            data.source_name = format!(
                "{}/{}",
                kind.subdir(),
                if split == Split::Train { "train" } else { "test" }
            );
            Ok(data)
        }
        DatasetKind::Cifar10 => {
            let dir = cifar_dir(data_root)?;
            let names: &[&str] = match split {
                Split::Train => &[
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ],
                Split::Test => &["test_batch.bin"],
            };
            let mut parts = Vec::new();
            for name in names {
                let bytes = read_maybe_gz(&resolve(&dir, name)?)?;
                parts.push(parse_cifar10::<S>(&bytes)?);
            }
            let mut data = concat(parts)?;
            data.source_name = format!(
                "cifar10/{}",
                if split == Split::Train { "train" } else { "test" }
            );
            Ok(data)
        }
    }
}

/// `name` or `name.gz`, whichever exists.
fn resolve(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
    ))
}

/// CIFAR archives unpack to a `cifar-10-batches-bin` directory; accept the
/// batch files either directly under the dataset dir or in that subdirectory.
fn cifar_dir(data_root: &Path) -> Result<PathBuf> {
    let base = data_root.join("cifar10");
    for dir in [base.clone(), base.join("cifar-10-batches-bin")] {
        if dir.join("data_batch_1.bin").exists() || dir.join("data_batch_1.bin.gz").exists() {
            return Ok(dir);
        }
    }
    Err(Error::io(
        base.join("data_batch_1.bin"),
        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
    ))
}

/// Read a whole file, transparently inflating gzip (sniffed by the 1F 8B
/// magic, independent of file name).
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1F && raw[1] == 0x8B {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        return Ok(out);
    }
    Ok(raw)
}

fn concat<S: Scalar>(parts: Vec<LabeledImages<S>>) -> Result<LabeledImages<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("concat", "no dataset parts"))?;
    let mut shape = first.images.shape().to_vec();
    let class_count = first.class_count;
    let source_name = first.source_name.clone();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for part in &parts {
        if part.images.shape()[1..] != shape[1..] || part.class_count != class_count {
            return Err(Error::Data(format!(
                "{}: incompatible dataset parts",
                part.source_name
            )));
        }
        images.extend_from_slice(part.images.data());
        labels.extend_from_slice(&part.labels);
    }
    shape[0] = labels.len();
    LabeledImages::new(
        Tensor::from_vec(&shape, images)?,
        labels,
        class_count,
        source_name,
    )
}
