//! Independent ground truth for the factorized layer.
//!
//! Two constructions of the equivalent flattened dense map are provided:
//! [`materialize_full_weight`] builds `W_1 ⊗ … ⊗ W_N` directly, while
//! [`probe_full_map`] treats the layer as a black box and reads the affine
//! map off its responses to the zero input and every basis vector. The probe
//! makes no assumption about vectorization order, so the two agreeing pins
//! down the convention: with row-major flattening and `y = x·W`, the full
//! weight is the Kronecker product of the mode matrices in mode order.
//!
//! Gradients are checked against central differences.

use crate::error::{Error, Result};
use crate::ndlinear::{NdLinearGrads, NdLinearLayer};
use crate::tensor::{checked_product, matmul, Tensor};

/// Default ceiling on materialized dense entries (`2^24`, 128 MiB of f64).
pub const DEFAULT_ENTRY_CAP: u128 = 1 << 24;

/// Step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// A dense affine map on flattened features, `y = x·w_full + b_full`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatAffineMap {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    /// `(ΠD_k, ΠH_k)`
    pub w_full: Tensor,
    /// `(ΠH_k,)`
    pub b_full: Tensor,
}

fn dense_entries(layer: &NdLinearLayer) -> u128 {
    let d: u128 = layer.in_dims().iter().map(|&v| v as u128).product();
    let h: u128 = layer.out_dims().iter().map(|&v| v as u128).product();
    d * h
}

fn check_cap(layer: &NdLinearLayer, cap: u128) -> Result<()> {
    let entries = dense_entries(layer);
    if entries > cap {
        return Err(Error::SizeCapExceeded { entries, cap });
    }
    Ok(())
}

/// Kronecker product of two matrices.
pub fn kron(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[ar, ac], &[br, bc]) = (a.dims(), b.dims()) else {
        return Err(Error::InvalidArgument("kron needs two matrices".into()));
    };
    let (rows, cols) = (ar * br, ac * bc);
    let mut out = vec![0.0; rows * cols];
    for i in 0..ar {
        for j in 0..ac {
            let s = a.data()[i * ac + j];
            for p in 0..br {
                let row = (i * br + p) * cols + j * bc;
                for (o, &v) in out[row..row + bc]
                    .iter_mut()
                    .zip(&b.data()[p * bc..(p + 1) * bc])
                {
                    *o = s * v;
                }
            }
        }
    }
    Tensor::from_vec(&[rows, cols], out)
}

/// `W_1 ⊗ W_2 ⊗ … ⊗ W_N` under the default entry cap.
pub fn materialize_full_weight(layer: &NdLinearLayer) -> Result<Tensor> {
    materialize_full_weight_capped(layer, DEFAULT_ENTRY_CAP)
}

pub fn materialize_full_weight_capped(layer: &NdLinearLayer, cap: u128) -> Result<Tensor> {
    check_cap(layer, cap)?;
    let mut it = layer.weights().iter();
    let first = it.next().expect("layer has at least one mode").clone();
    it.try_fold(first, |acc, w| kron(&acc, w))
}

/// Identifies the layer's affine map from its outputs alone.
pub fn probe_full_map(layer: &NdLinearLayer) -> Result<FlatAffineMap> {
    probe_full_map_capped(layer, DEFAULT_ENTRY_CAP)
}

pub fn probe_full_map_capped(layer: &NdLinearLayer, cap: u128) -> Result<FlatAffineMap> {
    check_cap(layer, cap)?;
    let d_flat = checked_product(layer.in_dims()).ok_or(Error::CountOverflow("ΠD_k"))?;
    let h_flat = checked_product(layer.out_dims()).ok_or(Error::CountOverflow("ΠH_k"))?;

    let mut zero_dims = vec![1];
    zero_dims.extend(layer.in_dims());
    let b_full = layer
        .forward_inference(&Tensor::zeros(&zero_dims)?)?
        .into_reshape(&[h_flat])?;

    // every basis vector at once, one per batch row
    let mut basis_dims = vec![d_flat];
    basis_dims.extend(layer.in_dims());
    let basis = Tensor::eye(d_flat)?.into_reshape(&basis_dims)?;
    let mut w_full = layer
        .forward_inference(&basis)?
        .into_reshape(&[d_flat, h_flat])?;
    for row in w_full.data_mut().chunks_exact_mut(h_flat) {
        for (v, b) in row.iter_mut().zip(b_full.data()) {
            *v -= b;
        }
    }
    Ok(FlatAffineMap {
        in_dims: layer.in_dims().to_vec(),
        out_dims: layer.out_dims().to_vec(),
        w_full,
        b_full,
    })
}

/// Applies the flattened map to `x` of shape `(B, D_1..D_N)` and reshapes
/// the result to `(B, H_1..H_N)`.
pub fn flat_forward(map: &FlatAffineMap, x: &Tensor) -> Result<Tensor> {
    let d_flat = map.w_full.dims()[0];
    let batch = x.dims()[0];
    if x.len() != batch * d_flat {
        return Err(Error::ShapeMismatch {
            expected: vec![batch, d_flat],
            actual: x.dims().to_vec(),
        });
    }
    let mut y = matmul(&x.reshape(&[batch, d_flat])?, &map.w_full)?;
    y.add_row_vector(map.b_full.data())?;
    let mut out_dims = vec![batch];
    out_dims.extend(&map.out_dims);
    y.into_reshape(&out_dims)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max))
}

/// Central-difference gradient of `loss` with respect to every element of
/// every tensor returned by `params`. Each element is perturbed in place and
/// restored bit-exactly afterwards.
pub fn central_difference<M: ?Sized>(
    target: &mut M,
    h: f64,
    mut params: impl FnMut(&mut M) -> Vec<&mut Tensor>,
    mut loss: impl FnMut(&M) -> f64,
) -> Vec<Tensor> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let shapes: Vec<Vec<usize>> = params(target).iter().map(|t| t.dims().to_vec()).collect();
    let mut grads = Vec::with_capacity(shapes.len());
    for (p, dims) in shapes.iter().enumerate() {
        let len: usize = dims.iter().product();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params(target)[p].data()[i];
            params(target)[p].data_mut()[i] = orig + h;
            let plus = loss(target);
            params(target)[p].data_mut()[i] = orig - h;
            let minus = loss(target);
            params(target)[p].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        grads.push(Tensor::from_vec(dims, g).expect("shape taken from a live tensor"));
    }
    grads
}

/// Numerical gradients of `loss_fn(layer.forward(x))` for every weight,
/// bias and input element.
pub fn finite_diff_grads(
    layer: &NdLinearLayer,
    x: &Tensor,
    loss_fn: impl Fn(&Tensor) -> f64,
    h: f64,
) -> Result<NdLinearGrads> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step h must be > 0, got {h}"
        )));
    }
    let mut state = (layer.clone(), x.clone());
    let n = layer.modes();
    let mut grads = central_difference(
        &mut state,
        h,
        |(l, x)| {
            let mut p = l.params_mut();
            p.push(x);
            p
        },
        |(l, x)| loss_fn(&l.forward_inference(x).expect("shapes fixed by caller")),
    );
    let d_input = grads.pop().expect("input gradient");
    let d_biases = if layer.has_bias() {
        Some(grads.split_off(n))
    } else {
        None
    };
    Ok(NdLinearGrads {
        d_weights: grads,
        d_biases,
        d_input,
    })
}

/// Largest relative error between two gradient sets over every entry.
pub fn max_grad_relative_error(a: &NdLinearGrads, b: &NdLinearGrads) -> Result<f64> {
    let mut worst = max_relative_error(&a.d_input, &b.d_input)?;
    let (pa, pb) = (a.param_grads(), b.param_grads());
    if pa.len() != pb.len() {
        return Err(Error::InvalidArgument(
            "gradient sets differ in length".into(),
        ));
    }
    for (x, y) in pa.into_iter().zip(pb) {
        worst = worst.max(max_relative_error(x, y)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(dims, data.to_vec()).unwrap()
    }

    fn half_sq(y: &Tensor) -> f64 {
        0.5 * y.data().iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn single_mode_full_weight_is_the_weight() {
        let layer = NdLinearLayer::init_xavier(&[3], &[4], false, &mut Rng::new(1)).unwrap();
        assert_eq!(materialize_full_weight(&layer).unwrap(), layer.weights()[0]);
    }

    #[test]
    fn hand_computed_kronecker() {
        let layer = NdLinearLayer::new(
            vec![t(&[2, 2], &[1., 2., 3., 4.]), t(&[2, 2], &[0., 1., 1., 0.])],
            None,
        )
        .unwrap();
        let expected = t(
            &[4, 4],
            &[
                0., 1., 0., 2., //
                1., 0., 2., 0., //
                0., 3., 0., 4., //
                3., 0., 4., 0.,
            ],
        );
        assert_eq!(materialize_full_weight(&layer).unwrap(), expected);
        let probed = probe_full_map(&layer).unwrap();
        assert!(probed.w_full.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn identity_modes_give_identity_matrix() {
        let layer =
            NdLinearLayer::new(vec![Tensor::eye(2).unwrap(), Tensor::eye(3).unwrap()], None)
                .unwrap();
        assert_eq!(
            materialize_full_weight(&layer).unwrap(),
            Tensor::eye(6).unwrap()
        );
        let map = probe_full_map(&layer).unwrap();
        let x = Tensor::randn(&mut Rng::new(2), &[3, 2, 3]).unwrap();
        assert_eq!(flat_forward(&map, &x).unwrap(), x);
    }

    #[test]
    fn probe_bias_behaviour() {
        let mut rng = Rng::new(4);
        let layer = NdLinearLayer::init_xavier(&[2, 3], &[3, 2], false, &mut rng).unwrap();
        let map = probe_full_map(&layer).unwrap();
        assert!(map.b_full.data().iter().all(|&v| v == 0.0));
        assert!(
            map.w_full
                .max_abs_diff(&materialize_full_weight(&layer).unwrap())
                .unwrap()
                < 1e-12
        );

        let mut one = NdLinearLayer::init_xavier(&[3], &[2], true, &mut rng).unwrap();
        one.biases_mut().unwrap()[0] = t(&[2], &[0.25, -4.0]);
        let map = probe_full_map(&one).unwrap();
        assert_eq!(map.b_full.data(), &[0.25, -4.0]);
        let y = flat_forward(&map, &Tensor::zeros(&[2, 3]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.25, -4.0, 0.25, -4.0]);
    }

    #[test]
    fn flat_forward_matches_layer() {
        let mut rng = Rng::new(5);
        let mut layer = NdLinearLayer::init_xavier(&[3, 2], &[2, 4], true, &mut rng).unwrap();
        for b in layer.biases_mut().unwrap() {
            *b = Tensor::randn(&mut rng, b.dims()).unwrap();
        }
        let x = Tensor::randn(&mut rng, &[5, 3, 2]).unwrap();
        let map = probe_full_map(&layer).unwrap();
        let err = flat_forward(&map, &x)
            .unwrap()
            .max_abs_diff(&layer.forward(&x).unwrap().0)
            .unwrap();
        assert!(err < 1e-10, "err = {err}");
        assert!(flat_forward(&map, &Tensor::zeros(&[5, 7]).unwrap()).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let cube = [32, 32, 32];
        let layer = NdLinearLayer::init_xavier(&cube, &cube, false, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            materialize_full_weight(&layer),
            Err(Error::SizeCapExceeded { .. })
        ));
        assert!(matches!(
            probe_full_map(&layer),
            Err(Error::SizeCapExceeded { .. })
        ));
    }

    #[test]
    fn fd_matches_analytic_on_quadratic_loss() {
        let mut rng = Rng::new(6);
        let mut layer = NdLinearLayer::init_xavier(&[2, 3], &[2, 2], true, &mut rng).unwrap();
        for b in layer.biases_mut().unwrap() {
            *b = Tensor::randn(&mut rng, b.dims()).unwrap();
        }
        let x = Tensor::randn(&mut rng, &[2, 2, 3]).unwrap();
        let (y, cache) = layer.forward(&x).unwrap();
        let analytic = layer.backward(&cache, &y).unwrap();
        let numeric = finite_diff_grads(&layer, &x, half_sq, DEFAULT_FD_STEP).unwrap();
        let err = max_grad_relative_error(&analytic, &numeric).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn fd_of_constant_loss_is_zero() {
        let mut rng = Rng::new(7);
        let layer = NdLinearLayer::init_xavier(&[2, 2], &[3, 2], true, &mut rng).unwrap();
        let x = Tensor::randn(&mut rng, &[1, 2, 2]).unwrap();
        let g = finite_diff_grads(&layer, &x, |_| 3.5, DEFAULT_FD_STEP).unwrap();
        for t in g.param_grads().into_iter().chain([&g.d_input]) {
            assert!(t.data().iter().all(|v| v.abs() < 1e-8));
        }
        assert!(finite_diff_grads(&layer, &x, |_| 0.0, 0.0).is_err());
    }

    #[test]
    fn fd_single_mode_matches_textbook_dense_gradient() {
        let mut rng = Rng::new(8);
        let layer = NdLinearLayer::init_xavier(&[3], &[2], true, &mut rng).unwrap();
        let x = Tensor::randn(&mut rng, &[4, 3]).unwrap();
        let y = layer.forward(&x).unwrap().0;
        // L = ½‖xW + b‖² ⇒ dW = xᵀy, db = Σ_rows y
        let numeric = finite_diff_grads(&layer, &x, half_sq, DEFAULT_FD_STEP).unwrap();
        let dw = matmul(&x.t().unwrap(), &y).unwrap();
        assert!(max_relative_error(&numeric.d_weights[0], &dw).unwrap() < 1e-6);
        let db = y.sum_rows().unwrap();
        assert!(max_relative_error(&numeric.d_biases.unwrap()[0], &db).unwrap() < 1e-6);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
