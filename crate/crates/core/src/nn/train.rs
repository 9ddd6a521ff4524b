use serde::{Deserialize, Serialize};

use super::loss::accuracy;
use super::{Dataset, Loss, Model, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of samples used for training; the rest is the test split.
    pub train_fraction: f64,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            seed: 42,
            train_fraction: 0.8,
            lr: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Only for classification losses.
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    let y = model.predict(&data.x)?;
    let (loss, _) = model.loss().value_and_grad(&y, &data.y)?;
    let accuracy = match model.loss() {
        Loss::SoftmaxCrossEntropy => Some(accuracy(&y, &data.y)),
        Loss::Mse => None,
    };
    Ok(Evaluation { loss, accuracy })
}

/// Splits `data` with the config's seed and fraction, then runs [`fit`].
pub fn train(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    optimizer: OptimizerKind,
) -> Result<TrainLog> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let (train_set, test_set) = data.split(config.train_fraction, &mut rng)?;
    fit_with_rng(model, &train_set, &test_set, config, optimizer, &mut rng)
}

/// Minibatch training on `train_set`; both splits are evaluated after every
/// epoch. Shuffling is driven by the config seed.
pub fn fit(
    model: &mut Model,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    optimizer: OptimizerKind,
) -> Result<TrainLog> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    fit_with_rng(model, train_set, test_set, config, optimizer, &mut rng)
}

fn fit_with_rng(
    model: &mut Model,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    optimizer: OptimizerKind,
    rng: &mut Rng,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut opt = Optimizer::new(optimizer, config.lr);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for (step, rows) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.select(rows)?;
            let (loss, grads) = model.loss_and_grads(&batch.x, &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: loss,
                });
            }
            opt.step(model.params_mut(), &grads.params)?;
        }
        let train_eval = evaluate(model, train_set)?;
        let test_eval = evaluate(model, test_set)?;
        if !train_eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: usize::MAX,
                value: train_eval.loss,
            });
        }
        log::debug!(
            "epoch {epoch}: train {:.6e} test {:.6e}",
            train_eval.loss,
            test_eval.loss
        );
        log.records.push(EpochRecord {
            epoch,
            train_loss: train_eval.loss,
            test_loss: test_eval.loss,
            train_accuracy: train_eval.accuracy,
            test_accuracy: test_eval.accuracy,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndlinear::NdLinearLayer;
    use crate::nn::{gen_linear_classification, gen_separable_regression, Dense, Layer};

    fn classifier(rng: &mut Rng, features: usize) -> Model {
        Model::new(
            &[features],
            vec![Layer::Dense(
                Dense::init_xavier(features, 2, true, rng).unwrap(),
            )],
            Loss::SoftmaxCrossEntropy,
        )
        .unwrap()
    }

    #[test]
    fn zero_lr_keeps_parameters_and_loss() {
        let mut rng = Rng::new(1);
        let data = gen_linear_classification(&mut rng, 64, &[4], 2).unwrap();
        let mut model = classifier(&mut rng, 4);
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &data, &cfg, OptimizerKind::adamw(0.01)).unwrap();
        assert_eq!(model, before);
        let losses: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn logistic_head_separates_linear_classes() {
        let mut rng = Rng::new(2);
        let data = gen_linear_classification(&mut rng, 400, &[11], 2).unwrap();
        let mut model = classifier(&mut rng, 11);
        let cfg = TrainConfig {
            epochs: 40,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &data, &cfg, OptimizerKind::adam()).unwrap();
        let acc = log.last().unwrap().train_accuracy.unwrap();
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(3);
            let data = gen_linear_classification(&mut rng, 100, &[3], 2).unwrap();
            let mut model = classifier(&mut rng, 3);
            let cfg = TrainConfig {
                epochs: 5,
                lr: 0.01,
                seed: 9,
                ..TrainConfig::default()
            };
            train(&mut model, &data, &cfg, OptimizerKind::adamw(0.01))
                .unwrap()
                .to_json_lines()
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_free_separable_data_is_fit_exactly() {
        let mut rng = Rng::new(4);
        let task = gen_separable_regression(&mut rng, 512, &[4, 5], &[3, 2], 0.0).unwrap();
        let (train_set, test_set) = task.data.split_at(256).unwrap();
        let layer = NdLinearLayer::init_xavier(&[4, 5], &[3, 2], false, &mut rng).unwrap();
        let mut model = Model::new(&[4, 5], vec![Layer::NdLinear(layer)], Loss::Mse).unwrap();
        // 250 epochs of 8 minibatches = 2000 steps
        let cfg = TrainConfig {
            epochs: 250,
            batch_size: 32,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let log = fit(
            &mut model,
            &train_set,
            &test_set,
            &cfg,
            OptimizerKind::adam(),
        )
        .unwrap();
        let mse = log.last().unwrap().test_loss;
        assert!(mse < 1e-6, "test mse {mse}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut rng = Rng::new(5);
        let data = gen_linear_classification(&mut rng, 10, &[2], 2).unwrap();
        let mut model = classifier(&mut rng, 2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &data, &cfg, OptimizerKind::adam()).is_err());
    }

    #[test]
    fn divergence_reports_non_finite_loss() {
        let mut rng = Rng::new(6);
        let task = gen_separable_regression(&mut rng, 64, &[4], &[4], 0.0).unwrap();
        let layer = NdLinearLayer::init_xavier(&[4], &[4], false, &mut rng).unwrap();
        let mut model = Model::new(&[4], vec![Layer::NdLinear(layer)], Loss::Mse).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 1e3,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &task.data, &cfg, OptimizerKind::sgd(0.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }
}
