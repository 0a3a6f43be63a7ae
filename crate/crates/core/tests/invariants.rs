use bmim_core::kernels::gram_matrix;
use bmim_core::likelihood::integrated_log_posterior;
use bmim_core::posterior::decompose_weights;
use bmim_core::{Hyperparameters, IndexSpec, KernelConfig, WeightSet};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), v[..rows * cols].to_vec()).unwrap()
}

fn kernels() -> impl Strategy<Value = KernelConfig> {
    prop_oneof![Just(KernelConfig::Gaussian), (1u32..4).prop_map(|d| KernelConfig::Polynomial { degree: d })]
}

proptest! {
    #[test]
    fn gram_is_symmetric_and_ignores_index_signs(
        xs in prop::collection::vec(-2.0..2.0f64, 24),
        w in prop::collection::vec(-1.0..1.0f64, 4),
        kernel in kernels(),
    ) {
        let x = matrix(6, 4, &xs);
        let spec = IndexSpec::from_sizes(&[2, 2]).unwrap();
        let weights = WeightSet::new(vec![w[..2].to_vec(), w[2..].to_vec()], &spec).unwrap();
        let flipped = WeightSet::new(vec![w[..2].iter().map(|v| -v).collect(), w[2..].to_vec()], &spec).unwrap();
        let k = gram_matrix(x.view(), &spec, &weights, kernel).unwrap();
        let kf = gram_matrix(x.view(), &spec, &flipped, kernel).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!((k[[i, j]] - k[[j, i]]).abs() < 1e-12);
                prop_assert!((k[[i, j]] - kf[[i, j]]).abs() < 1e-9 * (1.0 + k[[i, j]].abs()));
            }
            if kernel == KernelConfig::Gaussian {
                prop_assert!((k[[i, i]] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn posterior_is_invariant_to_row_order_and_covariate_shifts(
        ys in prop::collection::vec(-3.0..3.0f64, 7),
        zs in prop::collection::vec(-1.0..1.0f64, 7),
        xs in prop::collection::vec(-1.0..1.0f64, 14),
        shift in -5.0..5.0f64,
        lambda_inv in 0.05..20.0f64,
    ) {
        let n = 7;
        let x = matrix(n, 2, &xs);
        let spec = IndexSpec::single(2);
        let w = WeightSet::new(vec![vec![0.6, -0.3]], &spec).unwrap();
        let k = gram_matrix(x.view(), &spec, &w, KernelConfig::Gaussian).unwrap();
        let mut z = Array2::ones((n, 2));
        z.column_mut(1).assign(&Array1::from(zs.clone()));
        let y = Array1::from(ys.clone());
        let hyper = Hyperparameters::default();
        let base = integrated_log_posterior(y.view(), z.view(), k.view(), lambda_inv, &hyper).unwrap();

        // Flat prior on γ: moving y along a covariate column changes nothing.
        let shifted = &y + &(z.column(1).to_owned() * shift);
        let s = integrated_log_posterior(shifted.view(), z.view(), k.view(), lambda_inv, &hyper).unwrap();
        prop_assert!((s - base).abs() < 1e-8 * (1.0 + base.abs()));

        let perm: Vec<usize> = (0..n).rev().collect();
        let yp = Array1::from_shape_fn(n, |i| y[perm[i]]);
        let zp = Array2::from_shape_fn((n, 2), |(i, j)| z[[perm[i], j]]);
        let kp = Array2::from_shape_fn((n, n), |(i, j)| k[[perm[i], perm[j]]]);
        let p = integrated_log_posterior(yp.view(), zp.view(), kp.view(), lambda_inv, &hyper).unwrap();
        prop_assert!((p - base).abs() < 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn decomposition_reconstructs_up_to_sign(theta_star in prop::collection::vec(-2.0..2.0f64, 1..8)) {
        let (rho, theta) = decompose_weights(&theta_star);
        let theta = theta.unwrap();
        let norm: f64 = theta.iter().map(|t| t * t).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!(theta.iter().sum::<f64>() >= 0.0);
        let sign = if theta_star.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for (a, b) in theta_star.iter().zip(&theta) {
            prop_assert!((a - sign * rho.sqrt() * b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_weights_have_no_direction() {
    assert_eq!(decompose_weights(&[0.0, 0.0]), (0.0, None));
}
