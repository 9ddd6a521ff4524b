//! Randomized oracle suite.
//!
//! Each family runs one trial per seed on a random configuration:
//!
//! | family            | check                                                  | tolerance |
//! |-------------------|--------------------------------------------------------|-----------|
//! | `equivalence`     | layer forward vs. probed flat affine map, max abs diff | 1e-10     |
//! | `kronecker`       | Kronecker product vs. probed weight, max abs diff      | 1e-12     |
//! | `layer_gradients` | backward vs. central differences, max rel. error       | 1e-6      |
//! | `model_gradients` | model backward vs. central differences, max rel. error | 1e-5      |

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndlinear::NdLinearLayer;
use crate::nn::{compare_model_grads, Dense, Layer, Loss, Model};
use crate::oracle::{
    finite_diff_grads, flat_forward, materialize_full_weight, max_grad_relative_error,
    probe_full_map, DEFAULT_FD_STEP,
};
use crate::tensor::{matmul, Rng, Tensor};

pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const KRONECKER_TOL: f64 = 1e-12;
pub const LAYER_GRAD_TOL: f64 = 1e-6;
pub const MODEL_GRAD_TOL: f64 = 1e-5;

/// Corruptions used as negative controls for the suite itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negates the factorized forward output and the analytic gradients.
    FlipSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub max_rank: usize,
    pub max_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            base_seed: 0,
            max_rank: 4,
            max_dim: 5,
            fault: None,
        }
    }
}

/// A random layer configuration for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub seed: u64,
    pub batch: usize,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub with_bias: bool,
}

impl TrialConfig {
    /// Trial `index` cycles through ranks `1..=max_rank` and alternates the
    /// bias flag every full cycle; dims are uniform in `1..=max_dim`.
    pub fn random(seed: u64, index: usize, max_rank: usize, max_dim: usize) -> Self {
        let mut rng = Rng::new(seed);
        let modes = 1 + index % max_rank.max(1);
        let mut dims = || {
            (0..modes)
                .map(|_| rng.range_inclusive(1, max_dim.max(1)))
                .collect::<Vec<_>>()
        };
        let in_dims = dims();
        let out_dims = dims();
        Self {
            seed,
            batch: 1 + (seed % 3) as usize,
            in_dims,
            out_dims,
            with_bias: (index / max_rank.max(1)).is_multiple_of(2),
        }
    }

    /// Layer with random weights and (when enabled) non-zero biases, plus a
    /// random input batch.
    pub fn instantiate(&self) -> Result<(NdLinearLayer, Tensor)> {
        let mut rng = Rng::new(self.seed ^ 0x5eed);
        let mut layer =
            NdLinearLayer::init_xavier(&self.in_dims, &self.out_dims, self.with_bias, &mut rng)?;
        if let Some(bs) = layer.biases_mut() {
            for b in bs {
                *b = Tensor::randn(&mut rng, b.dims())?;
            }
        }
        let mut x_dims = vec![self.batch];
        x_dims.extend(&self.in_dims);
        Ok((layer, Tensor::randn(&mut rng, &x_dims)?))
    }

    /// Like [`instantiate`](Self::instantiate) but with every weight, bias
    /// and input drawn from `U(0.1, 1)`. Under `½‖y‖²` all gradient entries
    /// are then sums of positive terms, so none of them can cancel down to
    /// the size of the finite-difference round-off.
    pub fn instantiate_positive(&self) -> Result<(NdLinearLayer, Tensor)> {
        let mut rng = Rng::new(self.seed ^ 0x9051);
        let weights = self
            .in_dims
            .iter()
            .zip(&self.out_dims)
            .map(|(&d, &h)| Tensor::rand_uniform(&mut rng, &[d, h], 0.1, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let biases = if self.with_bias {
            Some(
                self.out_dims
                    .iter()
                    .map(|&h| Tensor::rand_uniform(&mut rng, &[h], 0.1, 1.0))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let mut x_dims = vec![self.batch];
        x_dims.extend(&self.in_dims);
        let x = Tensor::rand_uniform(&mut rng, &x_dims, 0.1, 1.0)?;
        Ok((NdLinearLayer::new(weights, biases)?, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    #[serde(flatten)]
    pub config: TrialConfig,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub name: String,
    pub tolerance: f64,
    pub max_error: f64,
    pub passed: bool,
    pub trials: Vec<TrialReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub passed: bool,
    pub failed_trials: usize,
    pub families: Vec<FamilyReport>,
}

impl VerifyReport {
    /// `"family seed=… dims=…→…"` for every failing trial.
    pub fn failures(&self) -> Vec<String> {
        self.families
            .iter()
            .flat_map(|f| {
                f.trials.iter().filter(|t| !t.passed).map(move |t| {
                    format!(
                        "{} seed={} in={:?} out={:?} bias={} error={:.3e}",
                        f.name,
                        t.config.seed,
                        t.config.in_dims,
                        t.config.out_dims,
                        t.config.with_bias,
                        t.max_error
                    )
                })
            })
            .collect()
    }
}

fn half_sq(y: &Tensor) -> f64 {
    0.5 * y.data().iter().map(|v| v * v).sum::<f64>()
}

pub fn equivalence_error(trial: &TrialConfig, fault: Option<Fault>) -> Result<f64> {
    let (layer, x) = trial.instantiate()?;
    let mut y = layer.forward(&x)?.0;
    if fault == Some(Fault::FlipSign) {
        y = y.scale(-1.0);
    }
    let map = probe_full_map(&layer)?;
    y.max_abs_diff(&flat_forward(&map, &x)?)
}

pub fn kronecker_error(trial: &TrialConfig, fault: Option<Fault>) -> Result<f64> {
    let trial = TrialConfig {
        with_bias: false,
        ..trial.clone()
    };
    let (layer, _) = trial.instantiate()?;
    let mut w = materialize_full_weight(&layer)?;
    if fault == Some(Fault::FlipSign) {
        w = w.scale(-1.0);
    }
    w.max_abs_diff(&probe_full_map(&layer)?.w_full)
}

pub fn layer_gradient_error(trial: &TrialConfig, fault: Option<Fault>) -> Result<f64> {
    let (layer, x) = trial.instantiate_positive()?;
    let (y, cache) = layer.forward(&x)?;
    let d_y = if fault == Some(Fault::FlipSign) {
        y.scale(-1.0)
    } else {
        y
    };
    let analytic = layer.backward(&cache, &d_y)?;
    let numeric = finite_diff_grads(&layer, &x, half_sq, DEFAULT_FD_STEP)?;
    max_grad_relative_error(&analytic, &numeric)
}

/// Smallest distance a ReLU pre-activation keeps from the kink, so that no
/// finite-difference step crosses it.
pub const RELU_MARGIN: f64 = 1e-4;

/// NdLinear → ReLU → flatten → Dense, alternating MSE and cross-entropy.
///
/// The draws are sign-structured so that every gradient entry is a sum of
/// same-signed terms. Mixed-sign draws occasionally produce entries a
/// million times smaller than the largest one, where central-difference
/// round-off alone exceeds the tolerance.
///
/// * Weights, biases and inputs are positive, except that each last-mode
///   weight column (and its bias) has one sign: negative columns give dead
///   ReLU units, positive ones live units.
/// * MSE targets sit below the predictions; the head is positive.
/// * Cross-entropy uses a rank-1 head `w aᵀ` with increasing `a` and the last
///   class as every row's label. Logits are scaled into `[-1, 1]`.
pub fn gradient_check_model(trial: &TrialConfig, index: usize) -> Result<(Model, Tensor, Tensor)> {
    let (mut nd, mut x) = trial.instantiate_positive()?;
    let n = nd.modes();
    let live = |j: usize| j.is_multiple_of(2);
    {
        let w = &mut nd.weights_mut()[n - 1];
        let h = w.dims()[1];
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if !live(i % h) {
                *v = -*v;
            }
        }
    }
    if let Some(bs) = nd.biases_mut() {
        for (j, v) in bs[n - 1].data_mut().iter_mut().enumerate() {
            if !live(j) {
                *v = -*v;
            }
        }
    }

    let mut rng = Rng::new(trial.seed ^ 0xdead);
    let row: usize = trial.in_dims.iter().product();
    let width: usize = trial.out_dims.iter().product();
    for _ in 0..1000 {
        let z = nd.forward_inference(&x)?;
        let bad: Vec<usize> = z
            .data()
            .chunks_exact(width)
            .enumerate()
            .filter(|(_, r)| r.iter().any(|v| v.abs() < RELU_MARGIN))
            .map(|(b, _)| b)
            .collect();
        if bad.is_empty() {
            break;
        }
        for b in bad {
            for v in &mut x.data_mut()[b * row..(b + 1) * row] {
                *v = rng.uniform(0.1, 1.0);
            }
        }
    }
    let hidden = nd
        .forward_inference(&x)?
        .map(|v| v.max(0.0))
        .into_reshape(&[trial.batch, width])?;

    let classes = 3;
    let (loss, mut dense) = if index.is_multiple_of(2) {
        let dense = Dense {
            weight: Tensor::rand_uniform(&mut rng, &[width, classes], 0.1, 1.0)?,
            bias: Some(Tensor::rand_uniform(&mut rng, &[classes], 0.1, 1.0)?),
        };
        (Loss::Mse, dense)
    } else {
        let w = Tensor::rand_uniform(&mut rng, &[width, 1], 0.1, 1.0)?;
        let a = Tensor::from_vec(&[1, classes], vec![0.2, 0.5, 1.0])?;
        let dense = Dense {
            weight: matmul(&w, &a)?,
            bias: Some(Tensor::rand_uniform(&mut rng, &[classes], -0.5, 0.5)?),
        };
        (Loss::SoftmaxCrossEntropy, dense)
    };
    let logits = |d: &Dense| -> Result<Tensor> {
        let mut o = matmul(&hidden, &d.weight)?;
        o.add_row_vector(d.bias.as_ref().expect("bias set above").data())?;
        Ok(o)
    };
    let peak = logits(&dense)?
        .data()
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    dense.weight = dense.weight.scale(1.0 / peak);
    dense.bias = dense.bias.map(|b| b.scale(1.0 / peak));

    let target = match loss {
        Loss::Mse => logits(&dense)?.sub(&Tensor::rand_uniform(
            &mut rng,
            &[trial.batch, classes],
            0.1,
            1.0,
        )?)?,
        Loss::SoftmaxCrossEntropy => {
            let mut t = Tensor::zeros(&[trial.batch, classes])?;
            for b in 0..trial.batch {
                t.set(&[b, classes - 1], 1.0);
            }
            t
        }
    };
    let model = Model::new(
        &trial.in_dims,
        vec![
            Layer::NdLinear(nd),
            Layer::Relu,
            Layer::Reshape(vec![width]),
            Layer::Dense(dense),
        ],
        loss,
    )?;
    Ok((model, x, target))
}

pub fn model_gradient_error(
    trial: &TrialConfig,
    index: usize,
    fault: Option<Fault>,
) -> Result<f64> {
    let (model, x, target) = gradient_check_model(trial, index)?;
    let (_, mut analytic) = model.loss_and_grads(&x, &target)?;
    if fault == Some(Fault::FlipSign) {
        for g in analytic.params.iter_mut().chain([&mut analytic.d_input]) {
            *g = g.scale(-1.0);
        }
    }
    compare_model_grads(&model, &x, &target, &analytic, DEFAULT_FD_STEP)
}

type Check = fn(&TrialConfig, usize, Option<Fault>) -> Result<f64>;

fn run_family(
    name: &str,
    tolerance: f64,
    cfg: &VerifyConfig,
    seed_offset: u64,
    check: Check,
) -> Result<FamilyReport> {
    let mut trials = Vec::with_capacity(cfg.seeds);
    for i in 0..cfg.seeds {
        let seed = cfg.base_seed + seed_offset + i as u64;
        let trial = TrialConfig::random(seed, i, cfg.max_rank, cfg.max_dim);
        let max_error = check(&trial, i, cfg.fault)?;
        trials.push(TrialReport {
            config: trial,
            max_error,
            passed: max_error < tolerance,
        });
    }
    Ok(FamilyReport {
        name: name.to_string(),
        tolerance,
        max_error: trials.iter().map(|t| t.max_error).fold(0.0, f64::max),
        passed: trials.iter().all(|t| t.passed),
        trials,
    })
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let families = vec![
        run_family("equivalence", EQUIVALENCE_TOL, cfg, 0, |t, _, f| {
            equivalence_error(t, f)
        })?,
        run_family("kronecker", KRONECKER_TOL, cfg, 10_000, |t, _, f| {
            kronecker_error(t, f)
        })?,
        run_family("layer_gradients", LAYER_GRAD_TOL, cfg, 20_000, |t, _, f| {
            layer_gradient_error(t, f)
        })?,
        run_family(
            "model_gradients",
            MODEL_GRAD_TOL,
            cfg,
            30_000,
            model_gradient_error,
        )?,
    ];
    let failed_trials = families
        .iter()
        .map(|f| f.trials.iter().filter(|t| !t.passed).count())
        .sum();
    Ok(VerifyReport {
        config: cfg.clone(),
        passed: failed_trials == 0,
        failed_trials,
        families,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_configs_cover_all_ranks_and_both_bias_modes() {
        let trials: Vec<TrialConfig> = (0..8)
            .map(|i| TrialConfig::random(i as u64, i, 4, 5))
            .collect();
        let ranks: Vec<usize> = trials.iter().map(|t| t.in_dims.len()).collect();
        assert_eq!(ranks, vec![1, 2, 3, 4, 1, 2, 3, 4]);
        assert!(trials[..4].iter().all(|t| t.with_bias));
        assert!(trials[4..].iter().all(|t| !t.with_bias));
        for t in &trials {
            assert!(t
                .in_dims
                .iter()
                .chain(&t.out_dims)
                .all(|&d| (1..=5).contains(&d)));
        }
    }

    #[test]
    fn small_suite_passes() {
        let report = run_verify(&VerifyConfig {
            seeds: 8,
            ..VerifyConfig::default()
        })
        .unwrap();
        assert!(report.passed, "{:?}", report.failures());
        assert_eq!(report.families.len(), 4);
        assert!(report.families.iter().all(|f| f.trials.len() == 8));
    }

    #[test]
    fn flipped_sign_is_caught_by_every_family() {
        let report = run_verify(&VerifyConfig {
            seeds: 4,
            fault: Some(Fault::FlipSign),
            ..VerifyConfig::default()
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.families.iter().all(|f| !f.passed));
        assert!(!report.failures().is_empty());
    }

    #[test]
    fn report_round_trips() {
        let report = run_verify(&VerifyConfig {
            seeds: 1,
            ..VerifyConfig::default()
        })
        .unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: VerifyReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}
