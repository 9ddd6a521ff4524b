//! Gradient checks on unstructured Gaussian draws of small layers, as a
//! complement to the sign-structured trials in `verify`.

use ndlinear::nn::{model_grad_check, Dense, Layer, Loss, Model};
use ndlinear::oracle::{finite_diff_grads, max_grad_relative_error, DEFAULT_FD_STEP};
use ndlinear::verify::TrialConfig;
use ndlinear::{Rng, Tensor};

fn half_sq(y: &Tensor) -> f64 {
    0.5 * y.data().iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn layer_backward_matches_central_differences_on_20_seeds() {
    for seed in 0..20u64 {
        let trial = TrialConfig::random(seed, seed as usize, 3, 3);
        let (layer, x) = trial.instantiate().unwrap();
        let (y, cache) = layer.forward(&x).unwrap();
        let analytic = layer.backward(&cache, &y).unwrap();
        let numeric = finite_diff_grads(&layer, &x, half_sq, DEFAULT_FD_STEP).unwrap();
        let err = max_grad_relative_error(&analytic, &numeric).unwrap();
        assert!(err < 1e-6, "seed {seed} {trial:?}: {err:.3e}");
    }
}

#[test]
fn two_mode_example_matches_entrywise() {
    let mut rng = Rng::new(3);
    let layer = ndlinear::NdLinearLayer::init_xavier(&[2, 3], &[2, 2], true, &mut rng).unwrap();
    let x = Tensor::randn(&mut rng, &[2, 2, 3]).unwrap();
    let (y, cache) = layer.forward(&x).unwrap();
    let analytic = layer.backward(&cache, &y).unwrap();
    let numeric = finite_diff_grads(&layer, &x, half_sq, DEFAULT_FD_STEP).unwrap();
    assert!(max_grad_relative_error(&analytic, &numeric).unwrap() < 1e-6);
}

#[test]
fn stacked_model_matches_central_differences_on_20_seeds() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(100 + seed);
        let trial = TrialConfig::random(100 + seed, seed as usize, 3, 3);
        let (nd, x) = trial.instantiate().unwrap();
        let width: usize = trial.out_dims.iter().product();
        let loss = if seed % 2 == 0 {
            Loss::Mse
        } else {
            Loss::SoftmaxCrossEntropy
        };
        let model = Model::new(
            &trial.in_dims,
            vec![
                Layer::NdLinear(nd),
                Layer::Reshape(vec![width]),
                Layer::Dense(Dense::init_xavier(width, 3, true, &mut rng).unwrap()),
            ],
            loss,
        )
        .unwrap();
        let mut target = Tensor::zeros(&[trial.batch, 3]).unwrap();
        for b in 0..trial.batch {
            target.set(&[b, rng.range_inclusive(0, 2)], 1.0);
        }
        let err = model_grad_check(&model, &x, &target, DEFAULT_FD_STEP).unwrap();
        assert!(err < 1e-5, "seed {seed} {loss:?}: {err:.3e}");
    }
}
