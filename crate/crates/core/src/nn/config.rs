//! JSON model descriptions.
//!
//! ```json
//! {"layers": [{"type": "ndlinear", "in": [11, 1], "out": [11, 64], "bias": true},
//!             {"type": "relu"},
//!             {"type": "dense", "in": 704, "out": 2}],
//!  "loss": "cross_entropy"}
//! ```
//!
//! The input feature dims come from `"input"` when present, otherwise from
//! the first layer.

use serde::{Deserialize, Serialize};

use super::{Dense, Layer, Loss, Model};
use crate::error::{Error, Result};
use crate::ndlinear::NdLinearLayer;
use crate::tensor::Rng;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerConfig {
    Ndlinear {
        #[serde(rename = "in")]
        in_dims: Vec<usize>,
        #[serde(rename = "out")]
        out_dims: Vec<usize>,
        #[serde(default = "yes")]
        bias: bool,
    },
    Dense {
        #[serde(rename = "in")]
        d_in: usize,
        #[serde(rename = "out")]
        d_out: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu {},
    Reshape {
        dims: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<usize>>,
    pub layers: Vec<LayerConfig>,
    pub loss: Loss,
}

impl ModelConfig {
    /// Parses a config. Syntax and schema errors name the JSON path of the
    /// offending value along with its line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn input_features(&self) -> Result<Vec<usize>> {
        if let Some(dims) = &self.input {
            return Ok(dims.clone());
        }
        match self.layers.first() {
            Some(LayerConfig::Ndlinear { in_dims, .. }) => Ok(in_dims.clone()),
            Some(LayerConfig::Dense { d_in, .. }) => Ok(vec![*d_in]),
            Some(_) => Err(Error::Config(
                "layers[0]: cannot infer input dims from this layer type; set \"input\"".into(),
            )),
            None => Err(Error::Config("\"layers\" must not be empty".into())),
        }
    }

    /// Instantiates the model with Xavier-initialized weights.
    pub fn build(&self, rng: &mut Rng) -> Result<Model> {
        let input = self.input_features()?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, cfg)| {
                let built = match cfg {
                    LayerConfig::Ndlinear {
                        in_dims,
                        out_dims,
                        bias,
                    } => NdLinearLayer::init_xavier(in_dims, out_dims, *bias, rng)
                        .map(Layer::NdLinear),
                    LayerConfig::Dense { d_in, d_out, bias } => {
                        Dense::init_xavier(*d_in, *d_out, *bias, rng).map(Layer::Dense)
                    }
                    LayerConfig::Relu {} => Ok(Layer::Relu),
                    LayerConfig::Reshape { dims } => Ok(Layer::Reshape(dims.clone())),
                };
                built.map_err(|e| Error::Config(format!("layers[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(&input, layers, self.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABULAR: &str = r#"{"layers":[
        {"type":"ndlinear","in":[11,1],"out":[11,64],"bias":true},
        {"type":"relu"},
        {"type":"dense","in":704,"out":2}],
        "loss":"cross_entropy"}"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ModelConfig::from_json(TABULAR).unwrap();
        assert_eq!(cfg.layers.len(), 3);
        let model = cfg.build(&mut Rng::new(0)).unwrap();
        assert_eq!(model.input_features(), &[11, 1]);
        assert_eq!(model.output_features(), &[2]);
        assert_eq!(model.num_params(), (11 * 11 + 64) + (11 + 64) + 704 * 2 + 2);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ModelConfig::from_json(TABULAR).unwrap();
        assert_eq!(
            ModelConfig::from_json(&cfg.to_json().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn schema_errors_carry_position() {
        let bad = "{\"layers\":[\n{\"type\":\"dense\",\"in\":4,\"outt\":2}],\"loss\":\"mse\"}";
        let err = ModelConfig::from_json(bad).unwrap_err().to_string();
        assert!(err.contains("layers[0]"), "{err}");
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("outt"), "{err}");

        let err = ModelConfig::from_json(r#"{"layers":[{"type":"conv"}],"loss":"mse"}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("conv"), "{err}");

        let err = ModelConfig::from_json(r#"{"layers":[{"type":"relu","size":3}],"loss":"mse"}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("size"), "{err}");
    }

    #[test]
    fn junction_errors_name_the_layer() {
        let cfg = ModelConfig::from_json(
            r#"{"layers":[{"type":"dense","in":4,"out":3},{"type":"dense","in":5,"out":1}],"loss":"mse"}"#,
        )
        .unwrap();
        let err = cfg.build(&mut Rng::new(0)).unwrap_err().to_string();
        assert!(err.contains("layers[1]"), "{err}");
    }

    #[test]
    fn input_needed_for_shape_free_first_layer() {
        let cfg = ModelConfig::from_json(r#"{"layers":[{"type":"relu"}],"loss":"mse"}"#).unwrap();
        assert!(cfg.build(&mut Rng::new(0)).is_err());
        let cfg = ModelConfig::from_json(
            r#"{"input":[2,3],"layers":[{"type":"reshape","dims":[6]},{"type":"relu"}],"loss":"mse"}"#,
        )
        .unwrap();
        assert_eq!(cfg.build(&mut Rng::new(0)).unwrap().output_features(), &[6]);
    }
}
