//! Low-rank and factorized adapters on a frozen dense layer.
//!
//! Both adapters add a trainable delta to `y₀ = x·W₀ + b₀`:
//!
//! * [`LoRAAdapter`]: `(α/r)·(x·A)·B` with `A: (d, r)`, `B: (r, h)`;
//! * [`NdLoRAAdapter`]: reshape `x` to `(B, d₁, d₂)`, apply a bias-free
//!   two-mode NdLinear layer `(d₁, d₂) → (h₁, h₂)`, flatten back. Its delta
//!   matrix is always `W_1 ⊗ W_2`.
//!
//! Each adapter starts with one factor at zero (`B` and `W_2`
//! respectively) so the initial delta is exactly zero. The factorized
//! adapter has no `α` scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndlinear::{xavier_bound, NdLinearLayer};
use crate::nn::{Optimizer, OptimizerKind};
use crate::oracle::{probe_full_map, DEFAULT_ENTRY_CAP};
use crate::tensor::{matmul, Rng, Tensor};

/// A pretrained dense map that is never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDense {
    w0: Tensor,
    b0: Option<Tensor>,
}

impl FrozenDense {
    pub fn new(w0: Tensor, b0: Option<Tensor>) -> Result<Self> {
        let &[_, h] = w0.dims() else {
            return Err(Error::InvalidArgument("w0 must be a matrix".into()));
        };
        if let Some(b) = &b0 {
            if b.dims() != [h] {
                return Err(Error::ShapeMismatch {
                    expected: vec![h],
                    actual: b.dims().to_vec(),
                });
            }
        }
        Ok(Self { w0, b0 })
    }

    pub fn random(d: usize, h: usize, rng: &mut Rng) -> Result<Self> {
        let bound = xavier_bound(d, h);
        Self::new(
            Tensor::rand_uniform(rng, &[d, h], -bound, bound)?,
            Some(Tensor::randn(rng, &[h])?.scale(0.1)),
        )
    }

    pub fn d(&self) -> usize {
        self.w0.dims()[0]
    }

    pub fn h(&self) -> usize {
        self.w0.dims()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.w0
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.b0.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.w0)?;
        if let Some(b) = &self.b0 {
            y.add_row_vector(b.data())?;
        }
        Ok(y)
    }
}

/// Common surface of the two adapters.
pub trait Adapter {
    /// The additive delta for `x: (B, d)`, shaped `(B, h)`.
    fn delta(&self, x: &Tensor) -> Result<Tensor>;
    /// Gradients of the trainable factors given `dL/d(delta)`.
    fn delta_grads(&self, x: &Tensor, d_delta: &Tensor) -> Result<Vec<Tensor>>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// The delta as an explicit `(d, h)` matrix.
    fn delta_matrix(&self) -> Result<Tensor>;

    fn num_trainable(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

fn add_delta(base: &FrozenDense, delta: Tensor, x: &Tensor) -> Result<Tensor> {
    let y = base.forward(x)?;
    y.add(&delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoRAAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub alpha: f64,
}

impl LoRAAdapter {
    /// `A` Xavier-uniform, `B` zero.
    pub fn new(d: usize, h: usize, rank: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be >= 1".into()));
        }
        let bound = xavier_bound(d, rank);
        Ok(Self {
            a: Tensor::rand_uniform(rng, &[d, rank], -bound, bound)?,
            b: Tensor::zeros(&[rank, h])?,
            alpha,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.dims()[1]
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }
}

impl Adapter for LoRAAdapter {
    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        Ok(matmul(&matmul(x, &self.a)?, &self.b)?.scale(self.scale()))
    }

    fn delta_grads(&self, x: &Tensor, d_delta: &Tensor) -> Result<Vec<Tensor>> {
        let s = self.scale();
        let xa = matmul(x, &self.a)?;
        let d_b = matmul(&xa.t()?, d_delta)?.scale(s);
        let d_a = matmul(&x.t()?, &matmul(d_delta, &self.b.t()?)?)?.scale(s);
        Ok(vec![d_a, d_b])
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.a, &mut self.b]
    }

    fn delta_matrix(&self) -> Result<Tensor> {
        Ok(matmul(&self.a, &self.b)?.scale(self.scale()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdLoRAAdapter {
    in_factors: (usize, usize),
    out_factors: (usize, usize),
    nd: NdLinearLayer,
}

impl NdLoRAAdapter {
    /// `W_1` Xavier-uniform, `W_2` zero.
    pub fn new(
        d: usize,
        h: usize,
        in_factors: (usize, usize),
        out_factors: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_factors.0 * in_factors.1 != d || out_factors.0 * out_factors.1 != h {
            return Err(Error::InvalidArgument(format!(
                "factors {in_factors:?} -> {out_factors:?} do not multiply to d={d}, h={h}"
            )));
        }
        let mut nd = NdLinearLayer::init_xavier(
            &[in_factors.0, in_factors.1],
            &[out_factors.0, out_factors.1],
            false,
            rng,
        )?;
        nd.weights_mut()[1] = Tensor::zeros(&[in_factors.1, out_factors.1])?;
        Ok(Self {
            in_factors,
            out_factors,
            nd,
        })
    }

    pub fn from_layer(nd: NdLinearLayer) -> Result<Self> {
        match (nd.in_dims(), nd.out_dims(), nd.has_bias()) {
            (&[d1, d2], &[h1, h2], false) => Ok(Self {
                in_factors: (d1, d2),
                out_factors: (h1, h2),
                nd,
            }),
            _ => Err(Error::InvalidArgument(
                "adapter layer must be a bias-free two-mode NdLinear".into(),
            )),
        }
    }

    pub fn layer(&self) -> &NdLinearLayer {
        &self.nd
    }

    pub fn in_factors(&self) -> (usize, usize) {
        self.in_factors
    }

    pub fn out_factors(&self) -> (usize, usize) {
        self.out_factors
    }

    fn d(&self) -> usize {
        self.in_factors.0 * self.in_factors.1
    }

    fn h(&self) -> usize {
        self.out_factors.0 * self.out_factors.1
    }

    fn fold(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.dims()[0];
        if x.dims() != [batch, self.d()] {
            return Err(Error::ShapeMismatch {
                expected: vec![batch, self.d()],
                actual: x.dims().to_vec(),
            });
        }
        x.reshape(&[batch, self.in_factors.0, self.in_factors.1])
    }
}

impl Adapter for NdLoRAAdapter {
    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.dims()[0];
        self.nd
            .forward_inference(&self.fold(x)?)?
            .into_reshape(&[batch, self.h()])
    }

    fn delta_grads(&self, x: &Tensor, d_delta: &Tensor) -> Result<Vec<Tensor>> {
        let batch = x.dims()[0];
        let (_, cache) = self.nd.forward(&self.fold(x)?)?;
        let d_y = d_delta.reshape(&[batch, self.out_factors.0, self.out_factors.1])?;
        Ok(self.nd.backward(&cache, &d_y)?.into_param_grads())
    }

    fn params(&self) -> Vec<&Tensor> {
        self.nd.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nd.params_mut()
    }

    fn delta_matrix(&self) -> Result<Tensor> {
        Ok(probe_full_map(&self.nd)?.w_full)
    }
}

pub fn lora_forward(base: &FrozenDense, adapter: &LoRAAdapter, x: &Tensor) -> Result<Tensor> {
    if adapter.a.dims()[0] != base.d() || adapter.b.dims()[1] != base.h() {
        return Err(Error::ShapeMismatch {
            expected: vec![base.d(), base.h()],
            actual: vec![adapter.a.dims()[0], adapter.b.dims()[1]],
        });
    }
    add_delta(base, adapter.delta(x)?, x)
}

pub fn ndlora_forward(base: &FrozenDense, adapter: &NdLoRAAdapter, x: &Tensor) -> Result<Tensor> {
    if adapter.d() != base.d() || adapter.h() != base.h() {
        return Err(Error::ShapeMismatch {
            expected: vec![base.d(), base.h()],
            actual: vec![adapter.d(), adapter.h()],
        });
    }
    add_delta(base, adapter.delta(x)?, x)
}

/// `d₁` is the largest divisor of `d` with `d₁ ≤ √d`, and `d₂ = d/d₁`.
/// Prime `d` falls back to `(1, d)` and logs a warning.
pub fn choose_factors(d: usize) -> (usize, usize) {
    let factors = closest_to_square(d);
    if factors.0 == 1 && d > 1 {
        log::warn!("{d} is prime; using the degenerate factorization (1, {d})");
    }
    factors
}

/// True when [`choose_factors`] falls back to `(1, d)`.
pub fn is_prime_fallback(d: usize) -> bool {
    d > 1 && closest_to_square(d).0 == 1
}

fn closest_to_square(d: usize) -> (usize, usize) {
    assert!(d >= 1, "cannot factor 0");
    let d1 = (1..=d)
        .take_while(|i| i * i <= d)
        .filter(|i| d.is_multiple_of(*i))
        .last()
        .unwrap_or(1);
    (d1, d / d1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParamReport {
    pub d: usize,
    pub h: usize,
    pub rank: usize,
    pub in_factors: (usize, usize),
    pub out_factors: (usize, usize),
    /// `r·(d + h)`
    pub lora: u64,
    /// `d₁·h₁ + d₂·h₂`
    pub ndlora: u64,
    /// `lora / ndlora`
    pub ratio: f64,
}

pub fn adapter_param_counts(
    d: usize,
    h: usize,
    rank: usize,
    in_factors: (usize, usize),
    out_factors: (usize, usize),
) -> Result<AdapterParamReport> {
    if rank == 0 {
        return Err(Error::InvalidArgument("LoRA rank must be >= 1".into()));
    }
    if d == 0 || h == 0 || in_factors.0 * in_factors.1 != d || out_factors.0 * out_factors.1 != h {
        return Err(Error::InvalidArgument(format!(
            "factors {in_factors:?} -> {out_factors:?} do not multiply to d={d}, h={h}"
        )));
    }
    let lora = rank as u64 * (d as u64 + h as u64);
    let ndlora = (in_factors.0 * out_factors.0 + in_factors.1 * out_factors.1) as u64;
    Ok(AdapterParamReport {
        d,
        h,
        rank,
        in_factors,
        out_factors,
        lora,
        ndlora,
        ratio: lora as f64 / ndlora as f64,
    })
}

/// Full-batch Adam on the MSE between `base(x) + delta(x)` and `target`.
/// Returns the loss before each step followed by the final loss.
pub fn fit_adapter<A: Adapter>(
    adapter: &mut A,
    base: &FrozenDense,
    x: &Tensor,
    target: &Tensor,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let y0 = base.forward(x)?;
    y0.expect_same_shape(target)?;
    let residual_target = target.sub(&y0)?;
    let scale = 1.0 / residual_target.len() as f64;
    let mut opt = Optimizer::new(OptimizerKind::adam(), lr);
    let mut curve = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let diff = adapter.delta(x)?.sub(&residual_target)?;
        let loss = diff.data().iter().map(|v| v * v).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                step,
                value: loss,
            });
        }
        curve.push(loss);
        if step == steps {
            break;
        }
        let grads = adapter.delta_grads(x, &diff.scale(2.0 * scale))?;
        opt.step(adapter.params_mut(), &grads)?;
    }
    Ok(curve)
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn relative_frobenius_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm() / b.frobenius_norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `Δ = G₁ ⊗ G₂` with the adapter's own factor shapes.
    RandomKron,
    /// Unstructured Gaussian `Δ`.
    RandomDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub d: usize,
    pub h: usize,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub samples: usize,
    pub target: TargetKind,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            d: 64,
            h: 64,
            rank: 8,
            alpha: 8.0,
            seed: 42,
            steps: 2000,
            lr: 3e-3,
            samples: 256,
            target: TargetKind::RandomKron,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub config: RecoveryConfig,
    pub params: AdapterParamReport,
    /// Relative Frobenius error of the learned NdLinear-LoRA delta.
    pub ndlora_recovery_error: f64,
    pub lora_recovery_error: f64,
    /// Every 10th step, plus the final loss.
    pub ndlora_loss_curve: Vec<f64>,
    pub lora_loss_curve: Vec<f64>,
    pub base_unchanged: bool,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn thin(curve: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = curve.iter().step_by(10).copied().collect();
    if !(curve.len() - 1).is_multiple_of(10) {
        out.push(*curve.last().expect("non-empty curve"));
    }
    out
}

/// Trains both adapters against a known delta on a random frozen base and
/// measures how well each one recovers it.
pub fn run_recovery(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    let dense_entries = cfg.d as u128 * cfg.h as u128;
    if dense_entries > DEFAULT_ENTRY_CAP {
        return Err(Error::SizeCapExceeded {
            entries: dense_entries,
            cap: DEFAULT_ENTRY_CAP,
        });
    }
    let mut warnings = Vec::new();
    for (name, v) in [("d", cfg.d), ("h", cfg.h)] {
        if is_prime_fallback(v) {
            warnings.push(format!(
                "{name} = {v} is prime; factorization falls back to (1, {v})"
            ));
        }
    }
    let in_factors = choose_factors(cfg.d);
    let out_factors = choose_factors(cfg.h);
    let params = adapter_param_counts(cfg.d, cfg.h, cfg.rank, in_factors, out_factors)?;

    let mut rng = Rng::new(cfg.seed);
    let base = FrozenDense::random(cfg.d, cfg.h, &mut rng)?;
    let target_delta = match cfg.target {
        TargetKind::RandomKron => {
            let g1 = Tensor::randn(&mut rng, &[in_factors.0, out_factors.0])?
                .scale(1.0 / (in_factors.0 as f64).sqrt());
            let g2 = Tensor::randn(&mut rng, &[in_factors.1, out_factors.1])?
                .scale(1.0 / (in_factors.1 as f64).sqrt());
            crate::oracle::kron(&g1, &g2)?
        }
        TargetKind::RandomDense => {
            Tensor::randn(&mut rng, &[cfg.d, cfg.h])?.scale(1.0 / (cfg.d as f64).sqrt())
        }
    };
    let x = Tensor::randn(&mut rng, &[cfg.samples, cfg.d])?;
    let target = base.forward(&x)?.add(&matmul(&x, &target_delta)?)?;
    let base_before = base.clone();

    let mut nd = NdLoRAAdapter::new(cfg.d, cfg.h, in_factors, out_factors, &mut rng)?;
    let nd_curve = fit_adapter(&mut nd, &base, &x, &target, cfg.steps, cfg.lr)?;
    let mut lora = LoRAAdapter::new(cfg.d, cfg.h, cfg.rank, cfg.alpha, &mut rng)?;
    let lora_curve = fit_adapter(&mut lora, &base, &x, &target, cfg.steps, cfg.lr)?;

    Ok(RecoveryReport {
        config: cfg.clone(),
        params,
        ndlora_recovery_error: relative_frobenius_error(&nd.delta_matrix()?, &target_delta)?,
        lora_recovery_error: relative_frobenius_error(&lora.delta_matrix()?, &target_delta)?,
        ndlora_loss_curve: thin(&nd_curve),
        lora_loss_curve: thin(&lora_curve),
        base_unchanged: base == base_before,
        warnings,
        notes: vec![
            "NdLinear-LoRA delta is unscaled (no alpha); alpha applies to LoRA only".into(),
        ],
    })
}
