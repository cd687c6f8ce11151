//! JSON checkpoints: config, shapes and every parameter tensor.

use serde::{Deserialize, Serialize};

use super::{CobwebNN, LayerParams, NnConfig, Params};
use crate::error::{Error, Result};

pub const NN_SCHEMA_VERSION: u32 = 1;
const SCHEMA: &str = "cobweb-nn";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema: String,
    version: u32,
    config: NnConfig,
    dim: usize,
    classes: usize,
    layers: Vec<LayerParams>,
}

impl CobwebNN {
    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            schema: SCHEMA.into(),
            version: NN_SCHEMA_VERSION,
            config: self.config,
            dim: self.dim,
            classes: self.classes,
            layers: self.params.layers.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("schema").and_then(|s| s.as_str()) != Some(SCHEMA) {
            return Err(Error::Format(format!("not a {SCHEMA} checkpoint")));
        }
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != NN_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: NN_SCHEMA_VERSION,
                found,
            });
        }
        let doc: Document = serde_json::from_value(value)?;
        doc.config.validate()?;
        if doc.layers.len() != doc.config.depth {
            return Err(Error::Format(format!("expected {} layers, found {}", doc.config.depth, doc.layers.len())));
        }
        for (i, l) in doc.layers.iter().enumerate() {
            let width = doc.config.branching.pow(i as u32 + 1);
            if l.width != width
                || l.prototypes.len() != width * doc.dim
                || l.prior_logits.len() != width
                || l.label_logits.len() != width * doc.classes
            {
                return Err(Error::Format(format!("layer {} has inconsistent shapes", i + 1)));
            }
        }
        let model = CobwebNN {
            config: doc.config,
            dim: doc.dim,
            classes: doc.classes,
            params: Params { layers: doc.layers },
        };
        if let Some((group, layer, i)) = model.params.first_non_finite() {
            return Err(Error::NonFinite(format!("{group}[{i}] at layer {layer}")));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_version_check() {
        let m = CobwebNN::new(3, 2, NnConfig::default(), &[0.1, 0.2, 0.3], 5).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(CobwebNN::from_json(&text).unwrap(), m);
        let bumped = text.replace("\"version\":1", "\"version\":9");
        match CobwebNN::from_json(&bumped) {
            Err(Error::SchemaVersion { expected: 1, found: 9 }) => {}
            other => panic!("{other:?}"),
        }
        let truncated = text.replacen("\"prior_logits\":[0.0,", "\"prior_logits\":[", 1);
        assert!(matches!(CobwebNN::from_json(&truncated), Err(Error::Format(_))));
    }
}
