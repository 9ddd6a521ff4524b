//! Separable-target regression: a factorized layer against dense
//! extractors, one of them shrunk to the same parameter budget.
//!
//! The three models are linear maps from `(d_1, d_2)` features to
//! `(h_1, h_2)` targets:
//!
//! * factorized: one bias-free NdLinear layer;
//! * matched dense: `Dense(ΠD → w) → Dense(w → ΠH)`, with hidden width `w`
//!   shrunk until the parameter count is within 5% of the factorized one;
//! * naive dense: a single bias-free `Dense(ΠD → ΠH)`, used only as the
//!   parameter reference.

use serde::{Deserialize, Serialize};

use super::{fit, gen_separable_regression, Dense, Layer, Loss, Model, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::ndlinear::{dense_param_count, param_count, NdLinearLayer};
use crate::tensor::Rng;

/// Relative tolerance for parameter matching.
pub const PARAM_MATCH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableExperiment {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SeparableExperiment {
    fn default() -> Self {
        Self {
            in_dims: vec![8, 8],
            out_dims: vec![8, 8],
            noise_sigma: 0.05,
            n_train: 256,
            n_test: 1024,
            epochs: 200,
            batch_size: 32,
            lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub nd_params: usize,
    pub matched_hidden: usize,
    pub matched_dense_params: usize,
    pub naive_dense_params: u64,
    pub nd_test_mse: f64,
    pub matched_dense_test_mse: f64,
}

/// Hidden width of a bias-free `d_in → w → d_out` dense stack whose
/// parameter count is closest to `target`; an error unless that count lies
/// within [`PARAM_MATCH_TOLERANCE`] of it.
pub fn match_dense_hidden(target: usize, d_in: usize, d_out: usize) -> Result<usize> {
    let per_unit = d_in + d_out;
    let below = (target / per_unit).max(1);
    let width = [below, below + 1]
        .into_iter()
        .min_by_key(|&w| (w * per_unit).abs_diff(target))
        .expect("two candidates");
    let off = (width * per_unit).abs_diff(target) as f64;
    if off > PARAM_MATCH_TOLERANCE * target as f64 {
        return Err(Error::InvalidArgument(format!(
            "no hidden width puts a {d_in}->w->{d_out} stack within 5% of {target} params"
        )));
    }
    Ok(width)
}

impl SeparableExperiment {
    fn flat(dims: &[usize]) -> usize {
        dims.iter().product()
    }

    pub fn run(&self, seed: u64) -> Result<ExperimentOutcome> {
        let mut rng = Rng::new(seed);
        let task = gen_separable_regression(
            &mut rng,
            self.n_train + self.n_test,
            &self.in_dims,
            &self.out_dims,
            self.noise_sigma,
        )?;
        let (train_set, test_set) = task.data.split_at(self.n_train)?;
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            train_fraction: 0.5,
            lr: self.lr,
        };

        let nd = NdLinearLayer::init_xavier(&self.in_dims, &self.out_dims, false, &mut rng)?;
        let mut nd_model = Model::new(&self.in_dims, vec![Layer::NdLinear(nd)], Loss::Mse)?;
        let nd_params = nd_model.num_params();
        debug_assert_eq!(
            nd_params as u64,
            param_count(&self.in_dims, &self.out_dims, false)?
        );

        let (d, h) = (Self::flat(&self.in_dims), Self::flat(&self.out_dims));
        let width = match_dense_hidden(nd_params, d, h)?;
        let mut dense_model = Model::new(
            &self.in_dims,
            vec![
                Layer::Dense(Dense::init_xavier(d, width, false, &mut rng)?),
                Layer::Dense(Dense::init_xavier(width, h, false, &mut rng)?),
                Layer::Reshape(self.out_dims.clone()),
            ],
            Loss::Mse,
        )?;

        let nd_log = fit(
            &mut nd_model,
            &train_set,
            &test_set,
            &cfg,
            OptimizerKind::adam(),
        )?;
        let dense_log = fit(
            &mut dense_model,
            &train_set,
            &test_set,
            &cfg,
            OptimizerKind::adam(),
        )?;

        Ok(ExperimentOutcome {
            seed,
            nd_params,
            matched_hidden: width,
            matched_dense_params: dense_model.num_params(),
            naive_dense_params: dense_param_count(&self.in_dims, &self.out_dims, false)?,
            nd_test_mse: nd_log.last().expect("epochs >= 1").test_loss,
            matched_dense_test_mse: dense_log.last().expect("epochs >= 1").test_loss,
        })
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
