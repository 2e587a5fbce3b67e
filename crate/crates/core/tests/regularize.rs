mod common;

use common::finite_differences;
use common::oracles::mutual_information_suite;
use dum_core::baselines::{
    ensemble_predict, mc_dropout_predict, mutual_information, pixel_uncertainty_mean, softmax_entropy,
};
use dum_core::heads::RbfCentroidHead;
use dum_core::nn::{Activation, DenseLayer, MlpModel, MlpSpec};
use dum_core::regularize::{
    dirichlet_entropy, dirichlet_entropy_grad, gradient_penalty, reconstruction_loss, RegularizerConfig,
    RegularizerKind, SumOutputs,
};
use dum_core::{Matrix, Rng};
use proptest::prelude::*;
use statrs::distribution::Beta;
use statrs::statistics::Distribution;

#[test]
fn mutual_information_identities() {
    mutual_information_suite(3, 500).assert_passed();
}

#[test]
fn entropy_examples() {
    assert!((softmax_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    assert_eq!(softmax_entropy(&[0.0, 1.0, 0.0]), 0.0);
    assert!((softmax_entropy(&[0.7, 0.3]) - 0.6109).abs() < 1e-4);
}

#[test]
fn deterministic_samplers_have_no_epistemic_part() {
    let mut rng = Rng::new(1);
    let model = MlpModel::new(&MlpSpec::new(4, &[8], Some(3)), &mut rng).unwrap();
    let x = rng.normal_matrix(6, 4, 1.0);
    let mc = mc_dropout_predict(&model, &x, 10, &mut rng).unwrap();
    assert!(mc.samples.windows(2).all(|w| w[0] == w[1]));
    assert!(mc.decompose().iter().all(|d| d.epistemic.abs() < 1e-12));
    let single = ensemble_predict(std::slice::from_ref(&model), &x).unwrap();
    assert!(single.decompose().iter().all(|d| d.epistemic.abs() < 1e-12));
    assert!(mc_dropout_predict(&model, &x, 0, &mut rng).is_err());
    let other = MlpModel::new(&MlpSpec::new(4, &[8], Some(2)), &mut rng).unwrap();
    assert!(ensemble_predict(&[model, other], &x).is_err());
    assert!(ensemble_predict(&[], &x).is_err());
}

#[test]
fn mc_dropout_is_reproducible_and_normalized() {
    let mut rng = Rng::new(2);
    let model = MlpModel::new(&MlpSpec::new(4, &[16, 16], Some(3)).with_dropout(0.4), &mut rng).unwrap();
    let x = rng.normal_matrix(5, 4, 1.0);
    let a = mc_dropout_predict(&model, &x, 10, &mut Rng::new(7)).unwrap();
    let b = mc_dropout_predict(&model, &x, 10, &mut Rng::new(7)).unwrap();
    assert_eq!(a, b);
    for s in &a.samples {
        assert!(s.iter_rows().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|&p| p >= 0.0)));
    }
    assert!(a.decompose().iter().any(|d| d.epistemic > 0.0));
}

#[test]
fn pixel_mean_matches_a_double_loop() {
    let mut rng = Rng::new(3);
    let field = rng.uniform_matrix(16, 16, 0.0, 2.0);
    let mut total = 0.0;
    for i in 0..16 {
        for j in 0..16 {
            total += field.get(i, j);
        }
    }
    assert_eq!(pixel_uncertainty_mean(&field).unwrap(), total / 256.0);
    assert!((pixel_uncertainty_mean(&Matrix::row_vector(&[0.0, 2f64.ln()])).unwrap() - 2f64.ln() / 2.0).abs() < 1e-15);
    assert!(pixel_uncertainty_mean(&Matrix::zeros(0, 3)).is_err());
}

#[test]
fn dirichlet_entropy_matches_beta_and_its_gradient() {
    for &(a, b) in &[(1.0, 1.0), (0.5, 3.0), (2.0, 7.5), (20.0, 40.0)] {
        let want = Beta::new(a, b).unwrap().entropy().unwrap();
        assert!((dirichlet_entropy(&[a, b]).unwrap() - want).abs() < 1e-9, "({a}, {b})");
    }
    let mut rng = Rng::new(4);
    for _ in 0..20 {
        let alpha: Vec<f64> = (0..4).map(|_| 0.3 + 5.0 * rng.uniform()).collect();
        let g = dirichlet_entropy_grad(&alpha).unwrap();
        let num = finite_differences(&alpha, 1e-6, |p| dirichlet_entropy(p).unwrap());
        assert!(g.iter().zip(&num).all(|(a, n)| (a - n).abs() < 1e-6));
    }
    assert!(dirichlet_entropy(&[]).is_err());
    assert!(dirichlet_entropy(&[1.0, 0.0]).is_err());
}

#[test]
fn reconstruction_of_an_exact_decoder_is_zero() {
    let mut rng = Rng::new(5);
    let mut layer = DenseLayer::new(3, 3, Activation::Linear, &mut rng);
    layer.weight = Matrix::identity(3);
    let decoder = MlpModel::from_layers(vec![layer]).unwrap();
    let x = rng.normal_matrix(7, 3, 1.0);
    let r = reconstruction_loss(&decoder, &x, &x, 2.0).unwrap();
    assert_eq!(r.loss, 0.0);
    assert!(r.z_grad.data().iter().all(|&g| g == 0.0));
    let z = rng.normal_matrix(7, 3, 1.0);
    let r = reconstruction_loss(&decoder, &z, &x, 2.0).unwrap();
    assert!((r.loss - 2.0 * r.mse).abs() < 1e-15);
}

#[test]
fn regularizer_configs_are_validated() {
    let mut rng = Rng::new(6);
    let decoder = MlpModel::new(&MlpSpec::new(2, &[], Some(3)), &mut rng).unwrap();
    assert!(RegularizerConfig::gradient_penalty(-1.0).validate().is_err());
    assert!(RegularizerConfig::gradient_penalty(f64::NAN).validate().is_err());
    assert!(RegularizerConfig::reconstruction(1.0, decoder.clone()).validate().is_ok());
    let mut broken = RegularizerConfig::reconstruction(1.0, decoder);
    broken.kind = RegularizerKind::GradPenalty;
    assert!(broken.validate().is_err());
    let mut missing = RegularizerConfig::none();
    missing.kind = RegularizerKind::Reconstruction;
    assert!(missing.validate().is_err());
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, k).prop_map(|l| dum_core::tensor::special::softmax(&l))
}

proptest! {
    #[test]
    fn uniform_maximizes_entropy(p in (2usize..10).prop_flat_map(simplex)) {
        let k = p.len() as f64;
        prop_assert!(softmax_entropy(&p) <= k.ln() + 1e-12);
    }

    #[test]
    fn mutual_information_ignores_sample_order(
        samples in (2usize..6, 1usize..8).prop_flat_map(|(k, t)| prop::collection::vec(simplex(k), t)),
        seed in any::<u64>(),
    ) {
        let a = mutual_information(&samples).unwrap();
        let mut shuffled = samples.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        let b = mutual_information(&shuffled).unwrap();
        prop_assert!((a.epistemic - b.epistemic).abs() < 1e-12);
        prop_assert!((a.aleatoric - b.aleatoric).abs() < 1e-12);
        prop_assert!(a.epistemic <= a.total + 1e-12);
    }

    #[test]
    fn dirichlet_entropy_peaks_at_ones(alpha in prop::collection::vec(1.0..50.0f64, 3)) {
        prop_assert!(dirichlet_entropy(&alpha).unwrap() <= -(2f64.ln()) + 1e-12);
    }

    #[test]
    fn reconstruction_loss_is_nonnegative(seed in any::<u64>(), strength in 0.0..10.0f64) {
        let mut rng = Rng::new(seed);
        let decoder = MlpModel::new(&MlpSpec::new(3, &[5], Some(4)), &mut rng).unwrap();
        let z = rng.normal_matrix(6, 3, 2.0);
        let x = rng.uniform_matrix(6, 4, 0.0, 1.0);
        let r = reconstruction_loss(&decoder, &z, &x, strength).unwrap();
        prop_assert!(r.mse >= 0.0 && r.loss >= 0.0);
    }

    #[test]
    fn gradient_penalty_ignores_batch_order(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let model = MlpModel::new(&MlpSpec::new(3, &[6], None), &mut rng).unwrap();
        let mut head = RbfCentroidHead::new(6, 2, 3, 0.7, 0.9, &mut rng).unwrap();
        let x = rng.normal_matrix(8, 3, 1.0);
        head.update_centroids(&model.features(&x).unwrap(), &[0, 1, 0, 1, 0, 1, 0, 1], 0.0).unwrap();
        let order = rng.permutation(8);
        let xp = x.select_rows(&order);
        for scalar in [&head as &dyn dum_core::regularize::ScalarHead, &SumOutputs] {
            let a = gradient_penalty(&model, scalar, &x, 0.5, 1.0).unwrap();
            let b = gradient_penalty(&model, scalar, &xp, 0.5, 1.0).unwrap();
            prop_assert!((a.penalty - b.penalty).abs() < 1e-12 * a.penalty.abs().max(1.0));
            for (ga, gb) in a.model.weights.iter().zip(&b.model.weights) {
                prop_assert!(ga.max_abs_diff(gb) < 1e-10);
            }
            let norms: Vec<f64> = order.iter().map(|&i| a.input_grad_norms[i]).collect();
            prop_assert!(norms.iter().zip(&b.input_grad_norms).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }
}
