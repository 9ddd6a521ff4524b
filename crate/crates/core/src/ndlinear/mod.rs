//! The N-dimensional linear layer.
//!
//! A layer holds one weight matrix `W_k` of shape `(D_k, H_k)` per feature
//! mode and, optionally, one bias vector `b_k` of length `H_k`. The forward
//! pass transforms the modes one after another in declaration order:
//!
//! ```text
//! Y = ((X ×₁ W_1 + b_1) ×₂ W_2 + b_2) ... ×_N W_N + b_N
//! ```
//!
//! Each bias is added right after its own mode product, so earlier biases
//! are carried through the later weight matrices.

mod count;
mod serialize;

pub use self::count::{dense_flop_count, dense_param_count, flop_count, param_count};
pub use self::serialize::LayerMeta;
pub use crate::tensor::FlopCounter;

use crate::error::{Error, Result};
use crate::tensor::{
    axes_moving_to_last, axes_restoring_from_last, matmul, mode_k_affine, Rng, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct NdLinearLayer {
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Option<Vec<Tensor>>,
}

/// Activations retained by [`NdLinearLayer::forward`]: `Z_0 = X`, then the
/// running tensor after each mode, ending with `Z_N = Y`.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub intermediates: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdLinearGrads {
    pub d_weights: Vec<Tensor>,
    pub d_biases: Option<Vec<Tensor>>,
    pub d_input: Tensor,
}

impl NdLinearGrads {
    /// Parameter gradients in the same order as [`NdLinearLayer::params`].
    pub fn param_grads(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.d_weights.iter().collect();
        if let Some(b) = &self.d_biases {
            out.extend(b.iter());
        }
        out
    }

    pub fn into_param_grads(self) -> Vec<Tensor> {
        let mut out = self.d_weights;
        if let Some(b) = self.d_biases {
            out.extend(b);
        }
        out
    }
}

fn check_dims(in_dims: &[usize], out_dims: &[usize]) -> Result<()> {
    if in_dims.is_empty() || in_dims.len() != out_dims.len() {
        return Err(Error::InvalidArgument(format!(
            "in_dims {in_dims:?} and out_dims {out_dims:?} must be non-empty and equally long"
        )));
    }
    if in_dims.iter().chain(out_dims).any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "all dims must be >= 1, got {in_dims:?} -> {out_dims:?}"
        )));
    }
    Ok(())
}

impl NdLinearLayer {
    /// Builds a layer from explicit matrices. `weights[k]` must be `(D_k, H_k)`
    /// and `biases[k]`, when given, a vector of length `H_k`.
    pub fn new(weights: Vec<Tensor>, biases: Option<Vec<Tensor>>) -> Result<Self> {
        let mut in_dims = Vec::with_capacity(weights.len());
        let mut out_dims = Vec::with_capacity(weights.len());
        for w in &weights {
            match *w.dims() {
                [d, h] => {
                    in_dims.push(d);
                    out_dims.push(h);
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "weight matrices must be rank 2, got {:?}",
                        w.dims()
                    )))
                }
            }
        }
        check_dims(&in_dims, &out_dims)?;
        if let Some(bs) = &biases {
            if bs.len() != weights.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} weights but {} biases",
                    weights.len(),
                    bs.len()
                )));
            }
            for (b, &h) in bs.iter().zip(&out_dims) {
                if b.dims() != [h] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![h],
                        actual: b.dims().to_vec(),
                    });
                }
            }
        }
        Ok(Self {
            in_dims,
            out_dims,
            weights,
            biases,
        })
    }

    /// Xavier-uniform weights, `W_k ~ U(±√(6/(D_k+H_k)))`, and zero biases.
    pub fn init_xavier(
        in_dims: &[usize],
        out_dims: &[usize],
        with_bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_dims(in_dims, out_dims)?;
        let weights = in_dims
            .iter()
            .zip(out_dims)
            .map(|(&d, &h)| {
                let bound = xavier_bound(d, h);
                Tensor::rand_uniform(rng, &[d, h], -bound, bound)
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = if with_bias {
            Some(
                out_dims
                    .iter()
                    .map(|&h| Tensor::zeros(&[h]))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Self::new(weights, biases)
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_dims
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    /// Number of feature modes `N`.
    pub fn modes(&self) -> usize {
        self.weights.len()
    }

    pub fn has_bias(&self) -> bool {
        self.biases.is_some()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn biases(&self) -> Option<&[Tensor]> {
        self.biases.as_deref()
    }

    pub fn biases_mut(&mut self) -> Option<&mut [Tensor]> {
        self.biases.as_deref_mut()
    }

    /// Weights then biases, in mode order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.weights.iter().collect();
        if let Some(b) = &self.biases {
            out.extend(b.iter());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.weights.iter_mut().collect();
        if let Some(b) = &mut self.biases {
            out.extend(b.iter_mut());
        }
        out
    }

    /// Total trainable scalars, counted off the stored tensors.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.modes() + 1 || x.dims()[1..] != self.in_dims[..] {
            let mut expected = vec![x.dims().first().copied().unwrap_or(1)];
            expected.extend(&self.in_dims);
            return Err(Error::ShapeMismatch {
                expected,
                actual: x.dims().to_vec(),
            });
        }
        Ok(())
    }

    fn bias(&self, k: usize) -> Option<&Tensor> {
        self.biases.as_ref().map(|b| &b[k])
    }

    /// Forward pass keeping every intermediate for [`Self::backward`].
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerCache)> {
        self.forward_counted(x, None)
    }

    pub fn forward_counted(
        &self,
        x: &Tensor,
        counter: Option<&FlopCounter>,
    ) -> Result<(Tensor, LayerCache)> {
        self.check_input(x)?;
        let mut intermediates = Vec::with_capacity(self.modes() + 1);
        intermediates.push(x.clone());
        for (k, w) in self.weights.iter().enumerate() {
            let z = mode_k_affine(
                intermediates.last().expect("non-empty"),
                w,
                self.bias(k),
                k + 1,
                counter,
            )?;
            intermediates.push(z);
        }
        let y = intermediates.last().expect("non-empty").clone();
        Ok((y, LayerCache { intermediates }))
    }

    /// Forward pass that keeps only the running tensor; each intermediate is
    /// dropped as soon as the next mode has been applied.
    pub fn forward_inference(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_inference_counted(x, None)
    }

    pub fn forward_inference_counted(
        &self,
        x: &Tensor,
        counter: Option<&FlopCounter>,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let mut z = mode_k_affine(x, &self.weights[0], self.bias(0), 1, counter)?;
        for (k, w) in self.weights.iter().enumerate().skip(1) {
            z = mode_k_affine(&z, w, self.bias(k), k + 1, counter)?;
        }
        Ok(z)
    }

    /// Reverse pass of [`Self::forward`] given `dL/dY`.
    ///
    /// Mode `k` in its 2-D view is `Y = X W_k + b_k`, so
    /// `dW_k = Xᵀ dY`, `db_k = Σ_rows dY` and `dX = dY W_kᵀ`, applied for
    /// `k = N … 1` against the cached `Z_{k-1}`.
    pub fn backward(&self, cache: &LayerCache, d_y: &Tensor) -> Result<NdLinearGrads> {
        let n = self.modes();
        if cache.intermediates.len() != n + 1 {
            return Err(Error::InvalidArgument(format!(
                "cache holds {} tensors, layer needs {}",
                cache.intermediates.len(),
                n + 1
            )));
        }
        self.check_input(&cache.intermediates[0])?;
        cache.intermediates[n].expect_same_shape(d_y)?;

        let rank = n + 1;
        let mut d_weights = Vec::with_capacity(n);
        let mut d_biases = Vec::with_capacity(n);
        let mut grad = d_y.clone();
        for k in (1..=n).rev() {
            let z_prev = &cache.intermediates[k - 1];
            let w = &self.weights[k - 1];
            let (d_k, h_k) = (self.in_dims[k - 1], self.out_dims[k - 1]);
            let to_last = axes_moving_to_last(rank, k);

            let x_moved = z_prev.permute(&to_last)?;
            let moved_dims = x_moved.dims().to_vec();
            let rows = x_moved.len() / d_k;
            let x_mat = x_moved.into_reshape(&[rows, d_k])?;
            let dy_mat = grad.permute(&to_last)?.into_reshape(&[rows, h_k])?;

            d_weights.push(matmul(&x_mat.t()?, &dy_mat)?);
            if self.biases.is_some() {
                d_biases.push(dy_mat.sum_rows()?);
            }
            let dx_mat = matmul(&dy_mat, &w.t()?)?;
            grad = dx_mat
                .into_reshape(&moved_dims)?
                .permute(&axes_restoring_from_last(rank, k))?;
        }
        d_weights.reverse();
        d_biases.reverse();
        Ok(NdLinearGrads {
            d_weights,
            d_biases: self.biases.as_ref().map(|_| d_biases),
            d_input: grad,
        })
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
