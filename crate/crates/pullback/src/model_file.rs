//! Model files: a JSON document with schema `pullback-flow/1`.
//!
//! Every float is written with 17 significant digits so loading reproduces
//! the parameters bit for bit.

use std::path::Path;

use pullback_core::flow::{Flow, FlowConfig};
use pullback_core::training::{Model, LOG_VARIANCE_PARAM};
use pullback_core::Tensor;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::config::TrainConfigFile;
use crate::error::{Error, Result};
use crate::io::check_schema;

pub const MODEL_SCHEMA: &str = "pullback-flow/1";

/// Provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfigFile>,
}

struct Floats<'a>(&'a [f64]);

impl Serialize for Floats<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for v in self.0 {
            seq.serialize_element(&float_raw(*v).map_err(serde::ser::Error::custom)?)?;
        }
        seq.end()
    }
}

fn float_raw(v: f64) -> std::result::Result<Box<RawValue>, String> {
    if !v.is_finite() {
        return Err(format!("cannot store non-finite value {v}"));
    }
    RawValue::from_string(format!("{v:.16e}")).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ParamOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    data: Floats<'a>,
}

#[derive(Serialize)]
struct ModelOut<'a> {
    schema: &'static str,
    dim: usize,
    layers: usize,
    hidden: usize,
    blocks: usize,
    scale_bound: Box<RawValue>,
    variances: Floats<'a>,
    log_variances: Floats<'a>,
    masks: Vec<&'a [bool]>,
    parameters: Vec<ParamOut<'a>>,
    meta: &'a ModelMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamIn {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelIn {
    #[allow(dead_code)]
    schema: String,
    dim: usize,
    layers: usize,
    hidden: usize,
    blocks: usize,
    scale_bound: f64,
    #[allow(dead_code)]
    variances: Vec<f64>,
    log_variances: Vec<f64>,
    masks: Vec<Vec<bool>>,
    parameters: Vec<ParamIn>,
    #[serde(default)]
    meta: ModelMeta,
}

pub fn model_to_string(model: &Model, meta: &ModelMeta) -> Result<String> {
    let flow = model.flow();
    let cfg = flow.config();
    let variances = model.variances();
    let params = flow
        .params()
        .iter()
        .filter(|p| p.name != LOG_VARIANCE_PARAM)
        .map(|p| ParamOut {
            name: &p.name,
            shape: p.value.shape(),
            data: Floats(p.value.data()),
        })
        .collect();
    let out = ModelOut {
        schema: MODEL_SCHEMA,
        dim: cfg.dim,
        layers: cfg.layers,
        hidden: cfg.hidden,
        blocks: cfg.blocks,
        scale_bound: float_raw(cfg.scale_bound).map_err(Error::usage)?,
        variances: Floats(&variances),
        log_variances: Floats(model.log_variances()),
        masks: flow.layers().iter().map(|l| l.mask()).collect(),
        parameters: params,
        meta,
    };
    serde_json::to_string(&out).map_err(|e| Error::usage(e.to_string()))
}

pub fn save_model(path: &Path, model: &Model, meta: &ModelMeta) -> Result<()> {
    let text = model_to_string(model, meta)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Parses a model document; `path` only labels errors.
pub fn model_from_str(path: &Path, text: &str) -> Result<(Model, ModelMeta)> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::malformed(path, e))?;
    check_schema(path, &value, MODEL_SCHEMA)?;
    let m: ModelIn = serde_json::from_value(value).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        expected: MODEL_SCHEMA,
        found: e.to_string(),
    })?;
    let bad = |msg: String| Error::malformed(path, msg);
    if m.log_variances.len() != m.dim {
        return Err(bad(format!("{} log-variances for dimension {}", m.log_variances.len(), m.dim)));
    }
    let config = FlowConfig {
        dim: m.dim,
        layers: m.layers,
        hidden: m.hidden,
        blocks: m.blocks,
        scale_bound: m.scale_bound,
    };
    let mut flow = Flow::with_masks(config, m.masks, 0).map_err(|e| bad(e.to_string()))?;
    let expected = flow.param_names();
    if m.parameters.len() != expected.len() {
        return Err(bad(format!("expected {} parameter tensors, found {}", expected.len(), m.parameters.len())));
    }
    for p in m.parameters {
        let value = Tensor::new(p.shape, p.data).map_err(|e| bad(format!("{}: {e}", p.name)))?;
        flow.set_param(&p.name, value).map_err(|e| bad(e.to_string()))?;
    }
    let mut model = Model::from_flow(flow).map_err(|e| bad(e.to_string()))?;
    model.set_log_variances(&m.log_variances)?;
    if !model.params().all_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok((model, m.meta))
}

pub fn load_model(path: &Path) -> Result<(Model, ModelMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pullback_core::training::TrainConfig;

    fn perturbed() -> Model {
        let mut m = Model::new(FlowConfig::new(3, 2).with_hidden(8), 5).unwrap();
        let mut k = 0.0;
        for p in m.flow_mut().params_mut().iter_mut() {
            for v in p.value.data_mut() {
                k += 1.0;
                *v += 0.01 * (k * 0.731f64).sin() / 3.0;
            }
        }
        m.set_log_variances(&[0.1, -1.0 / 3.0, 2.0]).unwrap();
        m
    }

    #[test]
    fn save_load_is_bitwise() {
        let m = perturbed();
        let meta = ModelMeta {
            dataset: Some("hemisphere_2_3".into()),
            train_config: Some(TrainConfigFile::from_config(&TrainConfig::default(), None)),
        };
        let text = model_to_string(&m, &meta).unwrap();
        let (back, meta2) = model_from_str(Path::new("m.json"), &text).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.log_variances(), m.log_variances());
        for (a, b) in back.params().iter().zip(m.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        let x = Tensor::from_rows(&[[0.3, -1.0, 2.0], [1.0 / 7.0, 0.0, -0.5]]).unwrap();
        assert_eq!(back.flow().forward_batch(&x).unwrap(), m.flow().forward_batch(&x).unwrap());
    }

    #[test]
    fn schema_and_corruption_errors() {
        let m = perturbed();
        let text = model_to_string(&m, &ModelMeta::default()).unwrap();
        let p = Path::new("m.json");
        let wrong = text.replace(MODEL_SCHEMA, "pullback-flow/2");
        assert!(matches!(model_from_str(p, &wrong), Err(Error::Schema { .. })));
        assert!(matches!(model_from_str(p, &text[..text.len() / 2]), Err(Error::Malformed { .. })));
        let missing = text.replace("\"hidden\"", "\"hiddn\"");
        assert!(matches!(model_from_str(p, &missing), Err(Error::Schema { .. })));
        let short = text.replace("\"dim\":3", "\"dim\":2");
        assert!(matches!(model_from_str(p, &short), Err(Error::Malformed { .. })));
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(float_raw(0.1).unwrap().get(), "1.0000000000000001e-1");
        assert!(float_raw(f64::NAN).is_err());
    }
}
