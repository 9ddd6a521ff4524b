//! A small layer-graph training engine.
//!
//! Models are a straight sequence of [`Layer`]s followed by a [`Loss`].
//! Inputs are batched along axis 0; every layer sees `(B, features…)`.

mod config;
mod data;
pub mod experiment;
mod loss;
mod optim;
mod train;

pub use self::config::{LayerConfig, ModelConfig};
pub use self::data::{
    gen_linear_classification, gen_separable_regression, separable_targets, Dataset, SeparableTask,
};
pub use self::loss::Loss;
pub use self::optim::{Optimizer, OptimizerKind};
pub use self::train::{evaluate, fit, train, EpochRecord, Evaluation, TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::ndlinear::{LayerCache, NdLinearLayer};
use crate::oracle::{central_difference, max_relative_error};
use crate::tensor::{checked_product, matmul, Rng, Tensor};

/// Fully connected layer on flattened features, `y = x·W + b` with `W` of
/// shape `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Dense {
    pub fn init_xavier(d_in: usize, d_out: usize, with_bias: bool, rng: &mut Rng) -> Result<Self> {
        let layer = NdLinearLayer::init_xavier(&[d_in], &[d_out], with_bias, rng)?;
        let mut params = layer.params().into_iter().cloned();
        let weight = params.next().expect("weight");
        Ok(Self {
            weight,
            bias: params.next(),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.dims()[0];
        let flat = x.reshape(&[batch, self.d_in()])?;
        let mut y = matmul(&flat, &self.weight)?;
        if let Some(b) = &self.bias {
            y.add_row_vector(b.data())?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    NdLinear(NdLinearLayer),
    Dense(Dense),
    Relu,
    /// Reshapes the feature axes to the given dims; the batch axis is kept.
    Reshape(Vec<usize>),
}

/// What each layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerState {
    NdLinear(LayerCache),
    Dense { input: Tensor },
    Relu { pre_activation: Tensor },
    Reshape { in_features: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    pub states: Vec<LayerState>,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    /// Parameter gradients in [`Model::params`] order.
    pub params: Vec<Tensor>,
    pub d_input: Tensor,
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::NdLinear(_) => "ndlinear",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Reshape(_) => "reshape",
        }
    }

    /// Output feature dims for the given input feature dims.
    pub fn output_features(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel = checked_product(input).ok_or(Error::CountOverflow("feature count"))?;
        match self {
            Layer::NdLinear(l) => {
                if input != l.in_dims() {
                    return Err(Error::ShapeMismatch {
                        expected: l.in_dims().to_vec(),
                        actual: input.to_vec(),
                    });
                }
                Ok(l.out_dims().to_vec())
            }
            Layer::Dense(d) => {
                if numel != d.d_in() {
                    return Err(Error::ShapeMismatch {
                        expected: vec![d.d_in()],
                        actual: input.to_vec(),
                    });
                }
                Ok(vec![d.d_out()])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Reshape(dims) => {
                if checked_product(dims) != Some(numel) || dims.is_empty() {
                    return Err(Error::ReshapeMismatch {
                        from: input.to_vec(),
                        to: dims.clone(),
                        from_len: numel,
                        to_len: checked_product(dims).unwrap_or(0),
                    });
                }
                Ok(dims.clone())
            }
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerState)> {
        match self {
            Layer::NdLinear(l) => {
                let (y, cache) = l.forward(x)?;
                Ok((y, LayerState::NdLinear(cache)))
            }
            Layer::Dense(d) => Ok((d.forward(x)?, LayerState::Dense { input: x.clone() })),
            Layer::Relu => Ok((
                x.map(|v| v.max(0.0)),
                LayerState::Relu {
                    pre_activation: x.clone(),
                },
            )),
            Layer::Reshape(dims) => {
                let mut out = vec![x.dims()[0]];
                out.extend(dims);
                Ok((
                    x.reshape(&out)?,
                    LayerState::Reshape {
                        in_features: x.dims()[1..].to_vec(),
                    },
                ))
            }
        }
    }

    fn backward(&self, state: &LayerState, d_y: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        match (self, state) {
            (Layer::NdLinear(l), LayerState::NdLinear(cache)) => {
                let g = l.backward(cache, d_y)?;
                let d_input = g.d_input.clone();
                Ok((g.into_param_grads(), d_input))
            }
            (Layer::Dense(d), LayerState::Dense { input }) => {
                let batch = input.dims()[0];
                let x = input.reshape(&[batch, d.d_in()])?;
                let mut grads = vec![matmul(&x.t()?, d_y)?];
                if d.bias.is_some() {
                    grads.push(d_y.sum_rows()?);
                }
                let d_x = matmul(d_y, &d.weight.t()?)?.into_reshape(input.dims())?;
                Ok((grads, d_x))
            }
            (Layer::Relu, LayerState::Relu { pre_activation }) => {
                // subgradient at 0 is 0
                let d_x = pre_activation.zip_map(d_y, |z, g| if z > 0.0 { g } else { 0.0 })?;
                Ok((Vec::new(), d_x))
            }
            (Layer::Reshape(_), LayerState::Reshape { in_features }) => {
                let mut dims = vec![d_y.dims()[0]];
                dims.extend(in_features);
                Ok((Vec::new(), d_y.reshape(&dims)?))
            }
            _ => Err(Error::InvalidArgument(format!(
                "cache entry does not belong to a {} layer",
                self.name()
            ))),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::NdLinear(l) => l.params(),
            Layer::Dense(d) => std::iter::once(&d.weight).chain(d.bias.as_ref()).collect(),
            Layer::Relu | Layer::Reshape(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::NdLinear(l) => l.params_mut(),
            Layer::Dense(d) => std::iter::once(&mut d.weight)
                .chain(d.bias.as_mut())
                .collect(),
            Layer::Relu | Layer::Reshape(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_features: Vec<usize>,
    output_features: Vec<usize>,
    layers: Vec<Layer>,
    loss: Loss,
}

impl Model {
    /// Checks that the layers compose from `input_features` and that the
    /// final output suits the loss.
    pub fn new(input_features: &[usize], layers: Vec<Layer>, loss: Loss) -> Result<Self> {
        let mut features = input_features.to_vec();
        if features.is_empty() || features.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid input feature dims {features:?}"
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            features = layer
                .output_features(&features)
                .map_err(|e| Error::Config(format!("layers[{i}] ({}): {e}", layer.name())))?;
        }
        if loss == Loss::SoftmaxCrossEntropy && features.len() != 1 {
            return Err(Error::Config(format!(
                "softmax cross-entropy needs a flat class axis, model outputs {features:?}"
            )));
        }
        Ok(Self {
            input_features: input_features.to_vec(),
            output_features: features,
            layers,
            loss,
        })
    }

    pub fn input_features(&self) -> &[usize] {
        &self.input_features
    }

    pub fn output_features(&self) -> &[usize] {
        &self.output_features
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 2 || x.dims()[1..] != self.input_features[..] {
            let mut expected = vec![x.dims()[0]];
            expected.extend(&self.input_features);
            return Err(Error::ShapeMismatch {
                expected,
                actual: x.dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ModelCache)> {
        self.check_input(x)?;
        let mut states = Vec::with_capacity(self.layers.len());
        let mut z = x.clone();
        for layer in &self.layers {
            let (next, state) = layer.forward(&z)?;
            states.push(state);
            z = next;
        }
        Ok((z, ModelCache { states }))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&self, cache: &ModelCache, d_y: &Tensor) -> Result<ModelGrads> {
        if cache.states.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cache has {} entries for {} layers",
                cache.states.len(),
                self.layers.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut grad = d_y.clone();
        for (layer, state) in self.layers.iter().zip(&cache.states).rev() {
            let (g, d_x) = layer.backward(state, &grad)?;
            per_layer.push(g);
            grad = d_x;
        }
        per_layer.reverse();
        Ok(ModelGrads {
            params: per_layer.into_iter().flatten().collect(),
            d_input: grad,
        })
    }

    /// Loss value and gradients for one batch.
    pub fn loss_and_grads(&self, x: &Tensor, target: &Tensor) -> Result<(f64, ModelGrads)> {
        let (y, cache) = self.forward(x)?;
        let (loss, d_y) = self.loss.value_and_grad(&y, target)?;
        Ok((loss, self.backward(&cache, &d_y)?))
    }
}

/// Central-difference gradients of the model loss: one tensor per parameter,
/// in [`Model::params`] order, followed by the input gradient.
pub fn model_numeric_grads(model: &Model, x: &Tensor, target: &Tensor, h: f64) -> Vec<Tensor> {
    let mut state = (model.clone(), x.clone());
    central_difference(
        &mut state,
        h,
        |(m, x)| {
            let mut p = m.params_mut();
            p.push(x);
            p
        },
        |(m, x)| {
            let y = m.predict(x).expect("shapes fixed");
            m.loss.value_and_grad(&y, target).expect("shapes fixed").0
        },
    )
}

/// Worst relative error between `analytic` gradients and central
/// differences of the model loss, over all parameters and the input.
pub fn compare_model_grads(
    model: &Model,
    x: &Tensor,
    target: &Tensor,
    analytic: &ModelGrads,
    h: f64,
) -> Result<f64> {
    let numeric = model_numeric_grads(model, x, target, h);
    let mut worst = 0.0f64;
    for (a, n) in analytic
        .params
        .iter()
        .chain([&analytic.d_input])
        .zip(&numeric)
    {
        worst = worst.max(max_relative_error(a, n)?);
    }
    Ok(worst)
}

/// [`compare_model_grads`] against the model's own backward pass.
pub fn model_grad_check(model: &Model, x: &Tensor, target: &Tensor, h: f64) -> Result<f64> {
    let (_, analytic) = model.loss_and_grads(x, target)?;
    compare_model_grads(model, x, target, &analytic, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::DEFAULT_FD_STEP;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let dense = Dense {
            weight: Tensor::eye(3).unwrap(),
            bias: None,
        };
        let model = Model::new(&[3], vec![Layer::Dense(dense)], Loss::Mse).unwrap();
        let x = Tensor::randn(&mut Rng::new(1), &[4, 3]).unwrap();
        assert_eq!(model.predict(&x).unwrap(), x);
    }

    #[test]
    fn relu_forward_and_mask() {
        let model = Model::new(&[2], vec![Layer::Relu], Loss::Mse).unwrap();
        let x = t(&[1, 2], &[-1.0, 2.0]);
        let (y, cache) = model.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);

        let neg = t(&[1, 3], &[-1.0, -2.0, 0.0]);
        let model = Model::new(&[3], vec![Layer::Relu], Loss::Mse).unwrap();
        let (_, cache_neg) = model.forward(&neg).unwrap();
        let g = model
            .backward(&cache_neg, &t(&[1, 3], &[5.0, 6.0, 7.0]))
            .unwrap();
        assert_eq!(g.d_input.data(), &[0.0, 0.0, 0.0]);
        drop(cache);
    }

    #[test]
    fn tabular_classifier_shape() {
        let mut rng = Rng::new(2);
        let layers = vec![
            Layer::NdLinear(
                NdLinearLayer::init_xavier(&[11, 1], &[11, 64], true, &mut rng).unwrap(),
            ),
            Layer::Relu,
            Layer::Dense(Dense::init_xavier(11 * 64, 2, true, &mut rng).unwrap()),
        ];
        let model = Model::new(&[11, 1], layers, Loss::SoftmaxCrossEntropy).unwrap();
        let x = Tensor::randn(&mut rng, &[5, 11, 1]).unwrap();
        assert_eq!(model.predict(&x).unwrap().dims(), &[5, 2]);
    }

    #[test]
    fn build_rejects_bad_junctions() {
        let mut rng = Rng::new(3);
        let err = Model::new(
            &[4],
            vec![
                Layer::Dense(Dense::init_xavier(4, 6, true, &mut rng).unwrap()),
                Layer::Dense(Dense::init_xavier(5, 2, true, &mut rng).unwrap()),
            ],
            Loss::Mse,
        )
        .unwrap_err();
        assert!(err.to_string().contains("layers[1]"), "{err}");
        assert!(Model::new(&[2, 3], vec![Layer::Reshape(vec![5])], Loss::Mse).is_err());
        assert!(Model::new(&[2, 3], vec![], Loss::SoftmaxCrossEntropy).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let model = Model::new(&[2, 3], vec![Layer::Relu], Loss::Mse).unwrap();
        assert!(model.forward(&Tensor::zeros(&[1, 3, 2]).unwrap()).is_err());
    }

    #[test]
    fn single_dense_mse_gradient_by_hand() {
        // one sample, M outputs: L = (1/M)Σ(y−t)², dW = xᵀ·2(y−t)/M
        let dense = Dense {
            weight: t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]),
            bias: Some(t(&[3], &[0.01, 0.02, 0.03])),
        };
        let model = Model::new(&[2], vec![Layer::Dense(dense.clone())], Loss::Mse).unwrap();
        let x = t(&[1, 2], &[1.5, -2.0]);
        let target = t(&[1, 3], &[1.0, 0.0, -1.0]);
        let (_, g) = model.loss_and_grads(&x, &target).unwrap();
        let y = dense.forward(&x).unwrap();
        let resid: Vec<f64> = y
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| 2.0 * (a - b) / 3.0)
            .collect();
        for i in 0..2 {
            for (j, r) in resid.iter().enumerate() {
                let expected = x.data()[i] * r;
                assert!((g.params[0].get(&[i, j]) - expected).abs() < 1e-15);
            }
        }
        for (g, r) in g.params[1].data().iter().zip(&resid) {
            assert!((g - r).abs() < 1e-15);
        }
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let mut rng = Rng::new(4);
        let layers = vec![
            Layer::NdLinear(NdLinearLayer::init_xavier(&[3, 2], &[2, 4], true, &mut rng).unwrap()),
            Layer::Relu,
            Layer::Reshape(vec![8]),
            Layer::Dense(Dense::init_xavier(8, 3, true, &mut rng).unwrap()),
        ];
        let mut model = Model::new(&[3, 2], layers.clone(), Loss::Mse).unwrap();
        for p in model.params_mut() {
            *p = Tensor::randn(&mut rng, p.dims()).unwrap();
        }
        let x = Tensor::randn(&mut rng, &[4, 3, 2]).unwrap();
        let target = Tensor::randn(&mut rng, &[4, 3]).unwrap();
        let err = model_grad_check(&model, &x, &target, DEFAULT_FD_STEP).unwrap();
        assert!(err < 1e-5, "mse err = {err}");

        let mut clf = Model::new(&[3, 2], layers, Loss::SoftmaxCrossEntropy).unwrap();
        for p in clf.params_mut() {
            *p = Tensor::randn(&mut rng, p.dims()).unwrap();
        }
        let labels = t(&[4, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 1., 0.]);
        let err = model_grad_check(&clf, &x, &labels, DEFAULT_FD_STEP).unwrap();
        assert!(err < 1e-5, "ce err = {err}");
    }
}
