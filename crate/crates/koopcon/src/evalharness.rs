//! Downstream evaluation: does a classifier trained on the condensed set
//! hold up against one trained on an equally sized random real subset?
//!
//! Both arms share one architecture and one training recipe; only the
//! training images differ. Each repeat draws a fresh classifier
//! initialization and a fresh real subset, so the reported mean/std reflect
//! run-to-run variance rather than a single lucky draw. All randomness is
//! derived from the harness seed; a rerun reproduces every number bit for
//! bit.

use crate::condense::CondensedSet;
use crate::datasets::{holdout_split, LabeledImages};
use crate::error::{Error, Result};
use crate::nn::{ConvNetClassifier, ImageShape};
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::tensor::{AdamState, Graph};

// Tag namespaces for the harness, disjoint from the condensation trainer's.
const TAG_REPEAT: u64 = 4 << 56; // | repeat index
const TAG_ARM_CONDENSED: u64 = 5 << 56;
const TAG_ARM_REAL_PICK: u64 = 6 << 56;
const TAG_ARM_REAL: u64 = 7 << 56;
const TAG_SHUFFLE: u64 = 8 << 56; // | epoch

/// Test batches are forwarded in chunks of this many images to bound the
/// tape size during evaluation.
const EVAL_CHUNK: usize = 512;

/// Training recipe for the evaluation classifiers.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Epochs per arm. Zero is allowed and means "evaluate the untouched
    /// initialization".
    pub epochs: usize,
    /// Sets with at most this many samples are trained full-batch; larger
    /// ones are shuffled into minibatches of this size.
    pub batch_size: usize,
    /// R: independent repeats, each with its own init and real subset.
    pub repeats: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub classifier_width: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            epochs: 50,
            batch_size: 1000,
            repeats: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            classifier_width: 128,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.classifier_width == 0 {
            return Err(Error::config("classifier_width", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be finite and positive, got {}", self.learning_rate),
            ));
        }
        for (key, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::config(
                "adam_epsilon",
                format!("must be finite and positive, got {}", self.adam_epsilon),
            ));
        }
        Ok(())
    }
}

/// A classifier trained by the harness, ready to score datasets.
pub struct TrainedClassifier<S: Scalar> {
    graph: Graph<S>,
    classifier: ConvNetClassifier,
    base_len: usize,
}

impl<S: Scalar> TrainedClassifier<S> {
    /// Fraction of `data` classified correctly. Forward-only; the tape is
    /// restored after each chunk.
    pub fn accuracy(&mut self, data: &LabeledImages<S>) -> Result<f64> {
        if data.len() == 0 {
            return Err(Error::Data("evaluation set is empty".into()));
        }
        let mut correct = 0usize;
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(EVAL_CHUNK) {
            let part = data.select(chunk)?;
            let x = self.graph.leaf(part.images, false);
            let logits = self.classifier.classify(&mut self.graph, x)?;
            let pred = self.classifier.predict(&self.graph, logits);
            self.graph.truncate(self.base_len);
            correct += pred
                .iter()
                .zip(&part.labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Raw predictions for `data`, in order.
    pub fn predictions(&mut self, data: &LabeledImages<S>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(data.len());
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(EVAL_CHUNK) {
            let part = data.select(chunk)?;
            let x = self.graph.leaf(part.images, false);
            let logits = self.classifier.classify(&mut self.graph, x)?;
            out.extend(self.classifier.predict(&self.graph, logits));
            self.graph.truncate(self.base_len);
        }
        Ok(out)
    }
}

/// Train a fresh classifier on `data` under `cfg`, seeded by `seed`.
///
/// Training is plain Adam on softmax cross-entropy. Small sets (at most
/// `cfg.batch_size` samples) take one full-batch step per epoch; larger sets
/// are shuffled each epoch and stepped per minibatch.
pub fn train_classifier<S: Scalar>(
    data: &LabeledImages<S>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<TrainedClassifier<S>> {
    cfg.validate()?;
    data.validate()?;
    if data.len() == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let (c, h, w) = data.image_dims();
    let image = ImageShape::new(c, h, w);
    let mut g = Graph::new();
    let mut rng = Rng::new(seed);
    let classifier =
        ConvNetClassifier::init(&mut g, &mut rng, image, data.class_count, cfg.classifier_width)?;
    let params = classifier.params();
    let base_len = g.len();
    let mut adam = AdamState::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);

    let full_batch = data.len() <= cfg.batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let batches: Vec<Vec<usize>> = if full_batch {
            vec![order.clone()]
        } else {
            let mut shuffle_rng = Rng::new(derive_seed(seed, TAG_SHUFFLE | epoch as u64));
            shuffle_rng.shuffle(&mut order);
            order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
        };
        for batch in batches {
            let part = data.select(&batch)?;
            let x = g.leaf(part.images, false);
            let logits = classifier.classify(&mut g, x)?;
            let loss = g.cross_entropy(logits, &part.labels)?;
            let value = g.scalar_value(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::numeric(
                    "eval_cross_entropy",
                    format!("loss became {value} at epoch {}", epoch + 1),
                ));
            }
            g.backward(loss)?;
            adam.step(&mut g, &params)?;
            g.truncate(base_len);
            g.zero_grads();
        }
    }
    Ok(TrainedClassifier {
        graph: g,
        classifier,
        base_len,
    })
}

/// One repeat's outcome.
#[derive(Clone, Copy, Debug)]
pub struct RepeatResult {
    pub repeat: usize,
    pub condensed_acc: f64,
    pub real_acc: f64,
}

/// Aggregate outcome of [`run_comparison`].
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_repeat: Vec<RepeatResult>,
    pub condensed_mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 when R = 1.
    pub condensed_std: f64,
    pub real_mean: f64,
    pub real_std: f64,
    /// real_mean - condensed_mean: how much accuracy the condensed set
    /// gives up against equally many real images.
    pub gap: f64,
}

impl EvalReport {
    fn from_repeats(per_repeat: Vec<RepeatResult>) -> EvalReport {
        let (c_mean, c_std) = mean_std(per_repeat.iter().map(|r| r.condensed_acc));
        let (r_mean, r_std) = mean_std(per_repeat.iter().map(|r| r.real_acc));
        EvalReport {
            per_repeat,
            condensed_mean: c_mean,
            condensed_std: c_std,
            real_mean: r_mean,
            real_std: r_std,
            gap: r_mean - c_mean,
        }
    }

    /// Per-repeat accuracies plus mean/std summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("repeat,condensed_acc,real_acc\n");
        for r in &self.per_repeat {
            out.push_str(&format!("{},{},{}\n", r.repeat, r.condensed_acc, r.real_acc));
        }
        out.push_str(&format!("mean,{},{}\n", self.condensed_mean, self.real_mean));
        out.push_str(&format!("std,{},{}\n", self.condensed_std, self.real_std));
        out
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let n = self.per_repeat.len();
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>8} {:>8} {:>4}\n", "arm", "mean", "std", "n"));
        out.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>4}\n",
            "condensed", self.condensed_mean, self.condensed_std, n
        ));
        out.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>4}\n",
            "real", self.real_mean, self.real_std, n
        ));
        out.push_str(&format!("gap (real - condensed): {:.4}\n", self.gap));
        out
    }
}

fn mean_std(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = vals.collect();
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Train-and-score both arms `cfg.repeats` times.
///
/// The condensed arm trains on `condensed`; the real arm trains on a fresh
/// per-repeat random subset of `real_train` with the same images-per-class
/// budget. Both score on `test`.
pub fn run_comparison<S: Scalar>(
    condensed: &CondensedSet,
    real_train: &LabeledImages<S>,
    test: &LabeledImages<S>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    condensed.validate()?;
    if condensed.class_count != test.class_count || real_train.class_count != test.class_count {
        return Err(Error::Compat(format!(
            "class counts disagree: condensed {}, real train {}, test {}",
            condensed.class_count, real_train.class_count, test.class_count
        )));
    }
    let dims = |s: &[usize]| (s[1], s[2], s[3]);
    if dims(condensed.images.shape()) != test.image_dims()
        || real_train.image_dims() != test.image_dims()
    {
        return Err(Error::Compat(format!(
            "image shapes disagree: condensed {:?}, real train {:?}, test {:?}",
            dims(condensed.images.shape()),
            real_train.image_dims(),
            test.image_dims()
        )));
    }
    let condensed_data = condensed.to_labeled_images::<S>()?;
    let mut per_repeat = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let repeat_seed = derive_seed(cfg.seed, TAG_REPEAT | r as u64);

        let mut arm_c = train_classifier(
            &condensed_data,
            cfg,
            derive_seed(repeat_seed, TAG_ARM_CONDENSED),
        )?;
        let condensed_acc = arm_c.accuracy(test)?;

        let (real_subset, _) = holdout_split(
            real_train,
            condensed.per_class,
            derive_seed(repeat_seed, TAG_ARM_REAL_PICK),
        )?;
        let mut arm_r =
            train_classifier(&real_subset, cfg, derive_seed(repeat_seed, TAG_ARM_REAL))?;
        let real_acc = arm_r.accuracy(test)?;

        per_repeat.push(RepeatResult {
            repeat: r,
            condensed_acc,
            real_acc,
        });
    }
    Ok(EvalReport::from_repeats(per_repeat))
}
