//! Factorized vs. flattened-dense forward benchmark.
//!
//! Counts come from the closed-form formulas and from an instrumented
//! forward; wall times are the median over timed trials after warmup. The
//! dense baseline is only materialized when its weight fits under a memory
//! cap, otherwise its timing is reported as `null`.

use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndlinear::{
    dense_flop_count, dense_param_count, flop_count, param_count, FlopCounter, NdLinearLayer,
};
use crate::oracle::{flat_forward, materialize_full_weight_capped, FlatAffineMap};
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_DENSE_MEMORY_CAP: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub batch: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub with_bias: bool,
    /// Bytes the dense weight matrix may occupy.
    pub dense_memory_cap: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            in_dims: vec![16, 16, 16],
            out_dims: vec![16, 16, 16],
            batch: 8,
            trials: 30,
            warmup: 5,
            seed: 42,
            with_bias: false,
            dense_memory_cap: DEFAULT_DENSE_MEMORY_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub param_count_nd: u64,
    pub param_count_dense: u64,
    pub flop_formula_nd: u64,
    pub flop_instrumented_nd: u64,
    pub flop_dense: u64,
    pub wall_ns_nd: u64,
    pub wall_ns_dense: Option<u64>,
    /// `wall_ns_dense / wall_ns_nd`.
    pub speedup: Option<f64>,
}

impl BenchReport {
    pub fn flop_ratio(&self) -> f64 {
        self.flop_dense as f64 / self.flop_formula_nd as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Median of wall times in nanoseconds.
fn time_median(trials: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<u64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    let n = samples.len();
    Ok(if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let param_count_nd = param_count(&cfg.in_dims, &cfg.out_dims, cfg.with_bias)?;
    let param_count_dense = dense_param_count(&cfg.in_dims, &cfg.out_dims, cfg.with_bias)?;
    let flop_formula_nd = flop_count(cfg.batch, &cfg.in_dims, &cfg.out_dims)?;
    let flop_dense = dense_flop_count(cfg.batch, &cfg.in_dims, &cfg.out_dims)?;

    let mut rng = Rng::new(cfg.seed);
    let mut layer =
        NdLinearLayer::init_xavier(&cfg.in_dims, &cfg.out_dims, cfg.with_bias, &mut rng)?;
    if let Some(bs) = layer.biases_mut() {
        for b in bs {
            *b = Tensor::randn(&mut rng, b.dims())?;
        }
    }
    let mut x_dims = vec![cfg.batch];
    x_dims.extend(&cfg.in_dims);
    let x = Tensor::randn(&mut rng, &x_dims)?;

    let counter = FlopCounter::new();
    layer.forward_inference_counted(&x, Some(&counter))?;
    let flop_instrumented_nd = counter.flops();

    let wall_ns_nd = time_median(cfg.trials, cfg.warmup, || {
        black_box(layer.forward_inference(black_box(&x))?);
        Ok(())
    })?;

    let dense_weights = dense_param_count(&cfg.in_dims, &cfg.out_dims, false)?;
    let wall_ns_dense = if dense_weights
        .checked_mul(8)
        .is_some_and(|b| b <= cfg.dense_memory_cap)
    {
        let w_full = materialize_full_weight_capped(&layer, dense_weights as u128)?;
        let h_flat: usize = cfg.out_dims.iter().product();
        let b_full = match layer.biases() {
            // only the bias path matters for timing, not its value
            Some(_) => Tensor::randn(&mut rng, &[h_flat])?,
            None => Tensor::zeros(&[h_flat])?,
        };
        let map = FlatAffineMap {
            in_dims: cfg.in_dims.clone(),
            out_dims: cfg.out_dims.clone(),
            w_full,
            b_full,
        };
        Some(time_median(cfg.trials, cfg.warmup, || {
            black_box(flat_forward(&map, black_box(&x))?);
            Ok(())
        })?)
    } else {
        log::info!(
            "dense baseline needs {dense_weights} weights, over the {} byte cap; not timed",
            cfg.dense_memory_cap
        );
        None
    };

    let speedup = wall_ns_dense.map(|d| d as f64 / wall_ns_nd.max(1) as f64);
    Ok(BenchReport {
        config: cfg.clone(),
        param_count_nd,
        param_count_dense,
        flop_formula_nd,
        flop_instrumented_nd,
        flop_dense,
        wall_ns_nd,
        wall_ns_dense,
        speedup,
    })
}

/// Column order of [`write_csv`].
pub const CSV_COLUMNS: [&str; 14] = [
    "in_dims",
    "out_dims",
    "batch",
    "trials",
    "warmup",
    "with_bias",
    "param_count_nd",
    "param_count_dense",
    "flop_formula_nd",
    "flop_instrumented_nd",
    "flop_dense",
    "wall_ns_nd",
    "wall_ns_dense",
    "speedup",
];

fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

/// One row per report; dims are written as `16x16x16` and missing dense
/// timings as empty cells.
pub fn write_csv<W: Write>(w: W, reports: &[BenchReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in reports {
        out.write_record([
            join_dims(&r.config.in_dims),
            join_dims(&r.config.out_dims),
            r.config.batch.to_string(),
            r.config.trials.to_string(),
            r.config.warmup.to_string(),
            r.config.with_bias.to_string(),
            r.param_count_nd.to_string(),
            r.param_count_dense.to_string(),
            r.flop_formula_nd.to_string(),
            r.flop_instrumented_nd.to_string(),
            r.flop_dense.to_string(),
            r.wall_ns_nd.to_string(),
            r.wall_ns_dense.map(|v| v.to_string()).unwrap_or_default(),
            r.speedup.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
