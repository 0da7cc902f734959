//! Run configuration: one flat JSON object of scalars and strings.
//!
//! Unknown keys are rejected outright so typos cannot silently fall back to
//! defaults. The provenance hash is computed from the fully defaulted config
//! re-serialized with sorted keys, so two files describing the same run hash
//! identically no matter how their keys are ordered or which defaults they
//! spell out.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condense::CondenseConfig;
use crate::datasets::DatasetKind;
use crate::error::{Error, Result};
use crate::evalharness::EvalConfig;
use crate::losses::LossWeights;
use crate::nn::DepthPreset;

/// Numeric precision the networks run at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(name: &str) -> Result<Precision> {
        match name {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::config(
                "precision",
                format!("unknown precision {other:?}; expected f32 or f64"),
            )),
        }
    }
}

/// Everything a run needs: condensation and evaluation hyperparameters plus
/// file locations and the global seed. Flat on purpose — it mirrors the
/// config file one to one.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    /// n': condensed images per class.
    pub img_per_class: usize,

    #[serde(default = "defaults::data_dir")]
    pub data_dir: String,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::precision")]
    pub precision: String,

    #[serde(default = "defaults::batch_per_class")]
    pub batch_per_class: usize,
    #[serde(default = "defaults::depth_preset")]
    pub depth_preset: String,
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "defaults::width_base")]
    pub width_base: usize,
    #[serde(default = "defaults::classifier_width")]
    pub classifier_width: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,

    #[serde(default = "defaults::alpha0")]
    pub alpha0: f64,
    #[serde(default = "defaults::alpha1")]
    pub alpha1: f64,
    #[serde(default = "defaults::alpha2")]
    pub alpha2: f64,
    #[serde(default = "defaults::alpha3")]
    pub alpha3: f64,
    #[serde(default = "defaults::sinkhorn_epsilon")]
    pub sinkhorn_epsilon: f64,
    #[serde(default = "defaults::sinkhorn_max_iters")]
    pub sinkhorn_max_iters: usize,
    #[serde(default = "defaults::sinkhorn_tolerance")]
    pub sinkhorn_tolerance: f64,

    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,

    #[serde(default = "defaults::eval_epochs")]
    pub eval_epochs: usize,
    #[serde(default = "defaults::eval_batch")]
    pub eval_batch: usize,
    #[serde(default = "defaults::eval_repeats")]
    pub eval_repeats: usize,
    #[serde(default = "defaults::eval_learning_rate")]
    pub eval_learning_rate: f64,
    #[serde(default = "defaults::eval_classifier_width")]
    pub eval_classifier_width: usize,
    /// Cap on test images per class during evaluation; 0 means the full
    /// test split.
    #[serde(default)]
    pub test_per_class: usize,
}

mod defaults {
    pub fn data_dir() -> String {
        "data".into()
    }
    pub fn out_dir() -> String {
        "out".into()
    }
    pub fn precision() -> String {
        "f32".into()
    }
    pub fn batch_per_class() -> usize {
        128
    }
    pub fn depth_preset() -> String {
        "medium".into()
    }
    pub fn latent_dim() -> usize {
        64
    }
    pub fn width_base() -> usize {
        32
    }
    pub fn classifier_width() -> usize {
        128
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn alpha0() -> f64 {
        1.0
    }
    pub fn alpha1() -> f64 {
        0.1
    }
    pub fn alpha2() -> f64 {
        1.0
    }
    pub fn alpha3() -> f64 {
        0.01
    }
    pub fn sinkhorn_epsilon() -> f64 {
        0.05
    }
    pub fn sinkhorn_max_iters() -> usize {
        200
    }
    pub fn sinkhorn_tolerance() -> f64 {
        1e-6
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
    pub fn eval_epochs() -> usize {
        50
    }
    pub fn eval_batch() -> usize {
        1000
    }
    pub fn eval_repeats() -> usize {
        5
    }
    pub fn eval_learning_rate() -> f64 {
        1e-3
    }
    pub fn eval_classifier_width() -> usize {
        128
    }
}

impl RunConfig {
    /// Full validation; returns non-fatal warnings on success. Delegates to
    /// the stage configs so every constraint lives in one place.
    pub fn validate(&self) -> Result<Vec<String>> {
        DatasetKind::parse(&self.dataset)?;
        Precision::parse(&self.precision)?;
        DepthPreset::parse(&self.depth_preset)?;
        let warnings = self.condense_config().and_then(|c| c.validate())?;
        self.eval_config().validate()?;
        Ok(warnings)
    }

    /// SHA-256 over the defaulted config serialized with sorted keys.
    ///
    /// `serde_json::Value` objects are BTree-backed, so converting through a
    /// `Value` canonicalizes key order regardless of how the source file or
    /// this struct order them.
    pub fn hash(&self) -> [u8; 32] {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = value.to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            sinkhorn_epsilon: self.sinkhorn_epsilon,
            sinkhorn_max_iters: self.sinkhorn_max_iters,
            sinkhorn_tolerance: self.sinkhorn_tolerance,
        }
    }

    pub fn condense_config(&self) -> Result<CondenseConfig> {
        Ok(CondenseConfig {
            dataset: self.dataset.clone(),
            batch_per_class: self.batch_per_class,
            img_per_class: self.img_per_class,
            depth_preset: DepthPreset::parse(&self.depth_preset)?,
            latent_dim: self.latent_dim,
            width_base: self.width_base,
            classifier_width: self.classifier_width,
            epochs: self.epochs,
            weights: self.loss_weights(),
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            seed: self.seed,
            config_hash: self.hash(),
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            epochs: self.eval_epochs,
            batch_size: self.eval_batch,
            repeats: self.eval_repeats,
            learning_rate: self.eval_learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            classifier_width: self.eval_classifier_width,
            seed: self.seed,
        }
    }
}

/// Parse a config object from JSON text.
pub fn parse_config(text: &str) -> Result<(RunConfig, Vec<String>)> {
    let cfg: RunConfig = serde_json::from_str(text)
        .map_err(|e| Error::config("config", e.to_string()))?;
    let warnings = cfg.validate()?;
    Ok((cfg, warnings))
}

/// Load and validate a config file.
///
/// An unreadable file is a usage error: the caller pointed at the wrong
/// path, and the message names it.
pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config("config", format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset":"mnist","img_per_class":10}"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let (cfg, warnings) = parse_config(MINIMAL).expect("parse");
        assert_eq!(cfg.dataset, "mnist");
        assert_eq!(cfg.img_per_class, 10);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.batch_per_class, 128);
        assert_eq!(cfg.precision, "f32");
        assert_eq!(cfg.out_dir, "out");
        assert_eq!(cfg.eval_repeats, 5);
        assert_eq!(cfg.seed, 0);
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_config(r#"{"dataset":"toy","img_per_class":2,"alpha9":1.0}"#)
            .map(|_| ())
            .unwrap_err();
        assert!(err.to_string().contains("alpha9"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        let err = parse_config(r#"{"dataset":"toy","img_per_class":2,"alpha2":-1.0}"#)
            .map(|_| ())
            .unwrap_err();
        assert!(err.to_string().contains("alpha2"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn wrong_types_are_config_errors() {
        let err = parse_config(r#"{"dataset":"toy","img_per_class":"ten"}"#)
            .map(|_| ())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_enumerations_name_their_key() {
        for (text, key) in [
            (r#"{"dataset":"imagenet","img_per_class":2}"#, "dataset"),
            (
                r#"{"dataset":"toy","img_per_class":2,"precision":"f16"}"#,
                "precision",
            ),
            (
                r#"{"dataset":"toy","img_per_class":2,"depth_preset":"ultra"}"#,
                "depth_preset",
            ),
        ] {
            let err = parse_config(text).map(|_| ()).unwrap_err();
            assert!(err.to_string().contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn hash_ignores_key_order_but_not_values() {
        let a = r#"{"dataset":"mnist","img_per_class":10,"seed":7,"epochs":20}"#;
        let b = r#"{"epochs":20,"seed":7,"img_per_class":10,"dataset":"mnist"}"#;
        let c = r#"{"epochs":21,"seed":7,"img_per_class":10,"dataset":"mnist"}"#;
        let hash = |t: &str| parse_config(t).expect("parse").0.hash();
        assert_eq!(hash(a), hash(b));
        assert_ne!(hash(a), hash(c));
    }

    #[test]
    fn spelled_out_defaults_hash_like_omitted_ones() {
        let implicit = parse_config(MINIMAL).expect("parse").0;
        let explicit = parse_config(
            r#"{"dataset":"mnist","img_per_class":10,"epochs":100,"precision":"f32"}"#,
        )
        .expect("parse")
        .0;
        assert_eq!(implicit.hash(), explicit.hash());
    }

    #[test]
    fn missing_file_is_a_usage_error_naming_the_path() {
        let err = load_config(Path::new("/definitely/not/here.json"))
            .map(|_| ())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/definitely/not/here.json"), "{err}");
    }

    #[test]
    fn lopsided_batch_yields_a_warning_not_an_error() {
        let (_, warnings) = parse_config(
            r#"{"dataset":"toy","img_per_class":8,"batch_per_class":4}"#,
        )
        .expect("parse");
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("batch_per_class"));
    }

    #[test]
    fn stage_configs_inherit_the_right_fields() {
        let (cfg, _) = parse_config(
            r#"{"dataset":"toy","img_per_class":2,"seed":9,"eval_epochs":7,"beta2":0.98}"#,
        )
        .expect("parse");
        let cc = cfg.condense_config().expect("condense");
        assert_eq!(cc.seed, 9);
        assert_eq!(cc.beta2, 0.98);
        assert_eq!(cc.img_per_class, 2);
        assert_eq!(cc.config_hash, cfg.hash());
        let ec = cfg.eval_config();
        assert_eq!(ec.epochs, 7);
        assert_eq!(ec.beta2, 0.98);
        assert_eq!(ec.seed, 9);
    }
}
