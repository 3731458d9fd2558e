mod common;

use multiverse_core::estimands::JointEstimates;
use multiverse_core::pooling::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn joint(psi: &[f64], sigma: DMatrix<f64>) -> JointEstimates {
    JointEstimates::from_covariance(
        (0..psi.len()).map(|k| format!("p{k}")).collect(),
        DVector::from_column_slice(psi),
        sigma,
        100,
    )
    .unwrap()
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

fn strongly_correlated() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 1.9, 1.9, 4.0])
}

#[test]
fn average_examples() {
    let a = pool_average(&joint(&[1.0, 2.0, 3.0], common::random_spd(3, &mut common::rng(1))));
    assert_eq!(a.estimate, 2.0);
    let a = pool_average(&joint(&[0.0; 4], DMatrix::identity(4, 4)));
    assert_eq!(a.se, 0.5);
    let single = pool_average(&joint(&[1.5], DMatrix::identity(1, 1)));
    assert_eq!((single.estimate, single.weights.clone()), (1.5, vec![1.0]));
}

#[test]
fn pool_se_examples() {
    let r = pool_se(&joint(&[0.0, 1.0], diag(&[1.0, 4.0]))).unwrap();
    assert!((r.weights[0] - 0.8).abs() < 1e-15 && (r.weights[1] - 0.2).abs() < 1e-15);
    assert!((r.estimate - 0.2).abs() < 1e-15);
    let eq = joint(&[1.0, 4.0, 2.0], diag(&[2.0; 3]));
    assert!((pool_se(&eq).unwrap().estimate - pool_average(&eq).estimate).abs() < 1e-15);
    assert!(pool_se(&joint(&[1.0, 2.0], diag(&[1.0, 0.0]))).is_err());
}

#[test]
fn gls_examples() {
    let r = pool_gls(&joint(&[0.0, 1.0], diag(&[1.0, 4.0])), DEFAULT_EPSILON).unwrap();
    assert!((r.weights[0] - 0.8).abs() < 1e-12 && (r.weights[1] - 0.2).abs() < 1e-12);
    let ex = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let r = pool_gls(&joint(&[0.0, 1.0], ex), DEFAULT_EPSILON).unwrap();
    assert!((r.weights[0] - 0.5).abs() < 1e-12);
    let id = joint(&[1.0, -1.0, 3.0], DMatrix::identity(3, 3));
    assert!((pool_gls(&id, DEFAULT_EPSILON).unwrap().estimate - 1.0).abs() < 1e-12);
}

#[test]
fn gls_handles_singular_covariance() {
    // two identical pipelines and an independent one: rank 2
    let s = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let r = pool_gls(&joint(&[1.0, 1.0, 0.0], s), DEFAULT_EPSILON).unwrap();
    assert_eq!(r.eigen_dropped, 1);
    assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!((r.weights[0] + r.weights[1] - 0.5).abs() < 1e-10);
    assert!(pool_gls(&joint(&[0.0, 0.0], DMatrix::zeros(2, 2)), DEFAULT_EPSILON).is_err());
}

#[test]
fn constrained_hand_example() {
    let j = joint(&[0.0, 1.0], strongly_correlated());
    let gls = pool_gls(&j, DEFAULT_EPSILON).unwrap();
    assert!((gls.weights[0] - 1.75).abs() < 1e-10 && (gls.weights[1] + 0.75).abs() < 1e-10);
    assert!((gls.estimate + 0.75).abs() < 1e-10);
    let c = pool_constrained_gls(&j, DEFAULT_EPSILON).unwrap();
    assert!((c.kappa.unwrap() - 0.75).abs() < 1e-8);
    assert!((c.weights[0] - 1.0).abs() < 1e-8 && c.weights[1].abs() < 1e-8);
    assert!(c.estimate.abs() < 1e-8 && (0.0..=1.0).contains(&(c.estimate + 1e-8)));
}

#[test]
fn constrained_leaves_small_weights() {
    let w = DVector::from_column_slice(&[0.5, 0.5]);
    let (c, kappa) = constrain_weights(&w);
    assert_eq!(c, w);
    assert_eq!(kappa, 0.5);
}

#[test]
fn pooled_test_examples() {
    let r = pool_average(&joint(&[0.0], DMatrix::identity(1, 1)));
    assert_eq!(pooled_test(&r, 0.05).unwrap().p_value, 1.0);
    let r = pool_average(&joint(&[1.0], DMatrix::identity(1, 1)));
    assert!((r.p_value - 0.3173).abs() < 1e-4);
    assert!((r.p_value - 2.0 * common::phi(-1.0)).abs() < 1e-12);
    let z = common::quantile(0.975);
    assert!((r.ci.0 - (1.0 - z)).abs() < 1e-9 && (r.ci.1 - (1.0 + z)).abs() < 1e-9);
}

#[test]
fn method_names_round_trip() {
    for m in PoolMethod::ALL {
        assert_eq!(PoolMethod::from_name(m.name()), Some(m));
    }
}

fn spd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=12, any::<u64>()).prop_map(|(j, seed)| common::random_spd(j, &mut common::rng(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spectral_matches_direct(sigma in spd_strategy()) {
        let (w, dropped) = gls_weights(&sigma, DEFAULT_EPSILON).unwrap();
        let oracle = common::gls_oracle(&sigma);
        prop_assert_eq!(dropped, 0);
        prop_assert!((w - &oracle).amax() <= 1e-10 * oracle.amax().max(1.0));
    }

    #[test]
    fn weights_sum_to_one_and_constrained_bounded(sigma in spd_strategy(), seed in any::<u64>()) {
        let j = sigma.nrows();
        let mut g = common::rng(seed);
        use rand::Rng;
        let psi: Vec<f64> = (0..j).map(|_| g.random_range(-2.0..2.0)).collect();
        let all = pool_all(&joint(&psi, sigma), DEFAULT_EPSILON).unwrap();
        for r in &all {
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let dot: f64 = r.weights.iter().zip(&psi).map(|(w, p)| w * p).sum();
            prop_assert!((r.estimate - dot).abs() <= 1e-12 * (1.0 + dot.abs()));
        }
        prop_assert!(all[3].weights.iter().all(|w| w.abs() <= 1.0 + 1e-10));
    }

    #[test]
    fn gls_has_smallest_variance(sigma in spd_strategy()) {
        let j = sigma.nrows();
        let all = pool_all(&joint(&vec![0.0; j], sigma), DEFAULT_EPSILON).unwrap();
        let gls = all[2].se;
        prop_assert!(gls <= all[0].se * (1.0 + 1e-9));
        prop_assert!(gls <= all[1].se * (1.0 + 1e-9));
        prop_assert!(gls <= all[3].se * (1.0 + 1e-9));
    }

    #[test]
    fn large_kappa_tends_to_average(w in prop::collection::vec(-5.0..5.0f64, 2..10)) {
        let j = w.len() as f64;
        let total: f64 = w.iter().sum();
        prop_assume!(total.abs() > 0.1);
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let m = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let kappa = 1e12;
        let s = kappa + m;
        for v in &w {
            let c = v / s + (1.0 - 1.0 / s) / j;
            prop_assert!((c - 1.0 / j).abs() < 1e-10);
        }
    }

    #[test]
    fn constrain_is_minimal(w in prop::collection::vec(-5.0..5.0f64, 2..10)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total.abs() > 0.1);
        let w = DVector::from_iterator(w.len(), w.iter().map(|v| v / total));
        let (c, kappa) = constrain_weights(&w);
        prop_assert!(c.amax() <= 1.0 + 1e-10);
        prop_assert!((c.sum() - 1.0).abs() < 1e-10);
        if w.amax() > 1.0 && kappa > 1e-9 {
            // a visibly smaller kappa breaks the bound
            let s = kappa * 0.999 + w.amax();
            let j = w.len() as f64;
            let worse = w.map(|v| v / s + (1.0 - 1.0 / s) / j);
            prop_assert!(worse.amax() > 1.0);
        }
    }
}
