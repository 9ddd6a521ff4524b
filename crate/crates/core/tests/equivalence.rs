use ndlinear::oracle::{flat_forward, materialize_full_weight, probe_full_map};
use ndlinear::tensor::{mode_k_product, Tensor};
use ndlinear::{NdLinearLayer, Rng};
use proptest::prelude::*;

fn dims_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..=4).prop_flat_map(|n| {
        (
            prop::collection::vec(1usize..=4, n),
            prop::collection::vec(1usize..=4, n),
        )
    })
}

fn layer_and_input(
    seed: u64,
    d: &[usize],
    h: &[usize],
    batch: usize,
    bias: bool,
) -> (NdLinearLayer, Tensor) {
    let mut rng = Rng::new(seed);
    let mut layer = NdLinearLayer::init_xavier(d, h, bias, &mut rng).unwrap();
    if let Some(bs) = layer.biases_mut() {
        for b in bs {
            *b = Tensor::randn(&mut rng, b.dims()).unwrap();
        }
    }
    let mut x_dims = vec![batch];
    x_dims.extend(d);
    (layer, Tensor::randn(&mut rng, &x_dims).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_matches_flattened_map((d, h) in dims_pair(), batch in 1usize..4, bias: bool, seed: u64) {
        let (layer, x) = layer_and_input(seed, &d, &h, batch, bias);
        let y = layer.forward(&x).unwrap().0;
        let map = probe_full_map(&layer).unwrap();
        prop_assert!(y.max_abs_diff(&flat_forward(&map, &x).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn output_shape_law((d, h) in dims_pair(), batch in 1usize..4, bias: bool, seed: u64) {
        let (layer, x) = layer_and_input(seed, &d, &h, batch, bias);
        let y = layer.forward(&x).unwrap().0;
        let mut expected = vec![batch];
        expected.extend(&h);
        prop_assert_eq!(y.dims(), &expected[..]);
    }

    #[test]
    fn kronecker_matches_probe((d, h) in dims_pair(), seed: u64) {
        let (layer, _) = layer_and_input(seed, &d, &h, 1, false);
        let kron = materialize_full_weight(&layer).unwrap();
        prop_assert!(kron.max_abs_diff(&probe_full_map(&layer).unwrap().w_full).unwrap() < 1e-12);
    }

    #[test]
    fn mode_k_product_is_linear(dims in prop::collection::vec(1usize..=4, 1..=3), h in 1usize..=4, seed: u64, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let k = 1 + rng.range_inclusive(0, dims.len() - 1);
        let mut t_dims = vec![2];
        t_dims.extend(&dims);
        let x = Tensor::randn(&mut rng, &t_dims).unwrap();
        let y = Tensor::randn(&mut rng, &t_dims).unwrap();
        let w = Tensor::randn(&mut rng, &[dims[k - 1], h]).unwrap();
        let lhs = mode_k_product(&x.scale(a).add(&y.scale(b)).unwrap(), &w, k).unwrap();
        let rhs = mode_k_product(&x, &w, k).unwrap().scale(a)
            .add(&mode_k_product(&y, &w, k).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}

#[test]
fn identity_mode_products_leave_tensors_unchanged() {
    for seed in 0..50 {
        let mut rng = Rng::new(seed);
        let rank = 1 + rng.range_inclusive(0, 3);
        let mut dims = vec![rng.range_inclusive(1, 3)];
        dims.extend((0..rank).map(|_| rng.range_inclusive(1, 5)));
        let t = Tensor::randn(&mut rng, &dims).unwrap();
        for (k, &d) in dims.iter().enumerate().skip(1) {
            let eye = Tensor::eye(d).unwrap();
            assert_eq!(
                mode_k_product(&t, &eye, k).unwrap(),
                t,
                "seed {seed} mode {k}"
            );
        }
    }
}

#[test]
fn mode_k_product_matches_fiber_loop() {
    let mut rng = Rng::new(11);
    let dims = [2, 3, 4, 2];
    let t = Tensor::randn(&mut rng, &dims).unwrap();
    for k in 1..dims.len() {
        let h = 3;
        let w = Tensor::randn(&mut rng, &[dims[k], h]).unwrap();
        let got = mode_k_product(&t, &w, k).unwrap();
        let mut out_dims = dims.to_vec();
        out_dims[k] = h;
        assert_eq!(got.dims(), &out_dims[..]);

        let total: usize = out_dims.iter().product();
        for flat in 0..total {
            let mut idx = vec![0; dims.len()];
            let mut rest = flat;
            for a in (0..dims.len()).rev() {
                idx[a] = rest % out_dims[a];
                rest /= out_dims[a];
            }
            let j = idx[k];
            let mut acc = 0.0;
            for i in 0..dims[k] {
                let mut src = idx.clone();
                src[k] = i;
                acc += t.get(&src) * w.get(&[i, j]);
            }
            assert!((got.get(&idx) - acc).abs() < 1e-12, "mode {k} at {idx:?}");
        }
    }
}
