//! Training configuration files (TOML).

use std::path::Path;

use pullback_core::training::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every [`TrainConfig`] field, all optional; present fields override the
/// base configuration they are applied to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_iso: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_vol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TrainConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::malformed(path, e.message()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::malformed("<config>", e.message()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain config serializes")
    }

    /// Full record of a resolved configuration.
    pub fn from_config(c: &TrainConfig, dataset: Option<&str>) -> Self {
        TrainConfigFile {
            dataset: dataset.map(str::to_string),
            variant: Some(c.variant.name().to_string()),
            flow_steps: Some(c.flow_steps),
            epochs: Some(c.epochs),
            batch_size: Some(c.batch_size),
            lambda_iso: Some(c.lambda_iso),
            lambda_vol: Some(c.lambda_vol),
            learning_rate: Some(c.learning_rate),
            warmup_steps: Some(c.warmup_steps),
            beta1: Some(c.beta1),
            beta2: Some(c.beta2),
            adam_eps: Some(c.adam_eps),
            weight_decay: Some(c.weight_decay),
            clip_norm: Some(c.clip_norm),
            hidden: Some(c.hidden),
            blocks: Some(c.blocks),
            scale_bound: Some(c.scale_bound),
            seed: Some(c.seed),
        }
    }

    pub fn apply(&self, mut c: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = &self.variant {
            c.variant = Variant::parse(v)?;
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            flow_steps,
            epochs,
            batch_size,
            lambda_iso,
            lambda_vol,
            learning_rate,
            warmup_steps,
            beta1,
            beta2,
            adam_eps,
            weight_decay,
            clip_norm,
            hidden,
            blocks,
            scale_bound,
            seed
        );
        c.validate()?;
        Ok(c)
    }
}

/// Preset for `dataset` (or the generic default) with `file` applied on top.
pub fn resolve(dataset: Option<&str>, file: Option<&TrainConfigFile>) -> Result<TrainConfig> {
    let name = dataset.or_else(|| file.and_then(|f| f.dataset.as_deref()));
    let base = name.and_then(TrainConfig::preset).unwrap_or_default();
    match file {
        Some(f) => f.apply(base),
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_preset() {
        let f = TrainConfigFile::from_toml("variant = \"standard_nf\"\nepochs = 5\nlearning_rate = 1e-3\n").unwrap();
        let c = resolve(Some("sinusoid_5_20"), Some(&f)).unwrap();
        assert_eq!(c.variant, Variant::StandardNf);
        assert_eq!((c.epochs, c.flow_steps, c.batch_size), (5, 24, 128));
        assert_eq!(c.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfigFile::from_toml("epoch = 3").is_err());
        let f = TrainConfigFile::from_toml("variant = \"fancy\"").unwrap();
        assert!(f.apply(TrainConfig::default()).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = TrainConfig::preset("hemisphere_5_20").unwrap().with_seed(11);
        let f = TrainConfigFile::from_config(&c, Some("hemisphere_5_20"));
        let back = TrainConfigFile::from_toml(&f.to_toml()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.apply(TrainConfig::default()).unwrap(), c);
    }
}
