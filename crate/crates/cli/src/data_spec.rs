//! `--data` strings for the `train` subcommand.
//!
//! ```text
//! classification:n=512,classes=2
//! separable:n=1024,noise=0.05
//! ```
//!
//! Feature dims come from the model config; `classes` defaults to the
//! model's output width.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use ndlinear::nn::{gen_linear_classification, gen_separable_regression, Dataset, Loss, Model};
use ndlinear::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Classification { n: usize, classes: Option<usize> },
    Separable { n: usize, noise: f64 },
}

impl DataSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut fields = BTreeMap::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .with_context(|| format!("expected key=value, got {pair:?}"))?;
            fields.insert(k.trim(), v.trim());
        }
        let mut take = |key: &str| fields.remove(key);
        let spec = match kind {
            "classification" => Self::Classification {
                n: parse_or("n", take("n"), 512)?,
                classes: take("classes")
                    .map(|v| parse_field("classes", v))
                    .transpose()?,
            },
            "separable" => Self::Separable {
                n: parse_or("n", take("n"), 1024)?,
                noise: parse_or("noise", take("noise"), 0.05)?,
            },
            other => bail!("unknown data kind {other:?}; expected classification or separable"),
        };
        if let Some(k) = fields.keys().next() {
            bail!("unknown key {k:?} for {kind} data");
        }
        if let Self::Classification { n: 0, .. } | Self::Separable { n: 0, .. } = spec {
            bail!("n must be >= 1");
        }
        Ok(spec)
    }

    /// Default data for a model: classification for cross-entropy heads,
    /// separable regression otherwise.
    pub fn default_for(loss: Loss) -> Self {
        match loss {
            Loss::SoftmaxCrossEntropy => Self::Classification {
                n: 512,
                classes: None,
            },
            Loss::Mse => Self::Separable {
                n: 1024,
                noise: 0.05,
            },
        }
    }

    pub fn generate(&self, model: &Model, rng: &mut Rng) -> Result<Dataset> {
        let input = model.input_features();
        let output = model.output_features();
        match *self {
            Self::Classification { n, classes } => {
                if model.loss() != Loss::SoftmaxCrossEntropy {
                    bail!("classification data needs a cross_entropy model");
                }
                let width = output[0];
                let classes = classes.unwrap_or(width);
                if classes != width {
                    bail!("data has {classes} classes but the model outputs {width}");
                }
                Ok(gen_linear_classification(rng, n, input, classes)?)
            }
            Self::Separable { n, noise } => {
                if model.loss() != Loss::Mse {
                    bail!("separable data needs an mse model");
                }
                Ok(gen_separable_regression(rng, n, input, output, noise)?.data)
            }
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    v.parse()
        .with_context(|| format!("bad value for {key}: {v:?}"))
}

fn parse_or<T: std::str::FromStr>(key: &str, v: Option<&str>, default: T) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    v.map_or(Ok(default), |v| parse_field(key, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_kinds() {
        assert_eq!(
            DataSpec::parse("classification:n=100,classes=3").unwrap(),
            DataSpec::Classification {
                n: 100,
                classes: Some(3)
            }
        );
        assert_eq!(
            DataSpec::parse("separable:noise=0.1").unwrap(),
            DataSpec::Separable {
                n: 1024,
                noise: 0.1
            }
        );
        assert_eq!(
            DataSpec::parse("classification").unwrap(),
            DataSpec::Classification {
                n: 512,
                classes: None
            }
        );
    }

    #[test]
    fn rejects_garbage() {
        for bad in [
            "images:n=3",
            "separable:n=x",
            "separable:m=3",
            "separable:n",
            "classification:n=0",
        ] {
            assert!(DataSpec::parse(bad).is_err(), "{bad}");
        }
    }
}
