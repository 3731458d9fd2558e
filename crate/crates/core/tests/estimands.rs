use multiverse_core::estimands::*;
use multiverse_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

fn one_sample(values: DMatrix<f64>) -> Dataset {
    let (n, j) = values.shape();
    Dataset::from_matrix(names("s", n), names("p", j), values, None).unwrap()
}

fn two_sample(values: DMatrix<f64>, x: Vec<bool>) -> Dataset {
    let (n, j) = values.shape();
    Dataset::from_matrix(names("s", n), names("p", j), values, Some(x)).unwrap()
}

/// Textbook covariance of column means, computed entry by entry.
fn mean_covariance_oracle(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, j) = v.shape();
    let means: Vec<f64> = (0..j).map(|c| (0..n).map(|i| v[(i, c)]).sum::<f64>() / n as f64).collect();
    DMatrix::from_fn(j, j, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            s += (v[(i, a)] - means[a]) * (v[(i, b)] - means[b]);
        }
        s / n as f64 / n as f64
    })
}

/// Plug-in variance of a difference of two independent group means.
fn two_group_variance_oracle(y1: &[f64], y0: &[f64]) -> f64 {
    let var = |y: &[f64]| {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
    };
    var(y1) / y1.len() as f64 + var(y0) / y0.len() as f64
}

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

#[test]
fn one_sample_hand_example() {
    let d = one_sample(DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]));
    let (joint, phi) = estimate_one_sample(&d, 0.0).unwrap();
    assert_eq!(joint.psi_hat[0], 2.0);
    assert_eq!(phi.phi.column(0).iter().cloned().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
    assert!((joint.sigma[(0, 0)] - 2.0 / 9.0).abs() < 1e-15);
}

#[test]
fn constant_column_has_zero_se() {
    let d = one_sample(DMatrix::from_column_slice(3, 1, &[5.0, 5.0, 5.0]));
    let (joint, _) = estimate_one_sample(&d, 5.0).unwrap();
    assert_eq!((joint.psi_hat[0], joint.se[0]), (0.0, 0.0));
    assert!(matches!(correlation_of(&joint), Err(Error::DegeneratePipeline { .. })));
}

#[test]
fn shifted_column_is_perfectly_correlated() {
    let v = DMatrix::from_fn(6, 2, |i, j| (i * i) as f64 + 10.0 * j as f64);
    let (joint, _) = estimate_one_sample(&one_sample(v), 0.0).unwrap();
    assert_eq!(correlation_of(&joint).unwrap()[(0, 1)], 1.0);
}

#[test]
fn two_sample_matches_group_variance_oracle() {
    // group 1: (2, 4), group 0: (1, 1)
    let v = DMatrix::from_column_slice(4, 1, &[2.0, 4.0, 1.0, 1.0]);
    let d = two_sample(v, vec![true, true, false, false]);
    let (joint, _) = estimate_two_sample(&d).unwrap();
    assert_eq!(joint.psi_hat[0], 2.0);
    let oracle = two_group_variance_oracle(&[2.0, 4.0], &[1.0, 1.0]);
    assert!((joint.sigma[(0, 0)] - oracle).abs() < 1e-14, "{} vs {oracle}", joint.sigma[(0, 0)]);
}

#[test]
fn two_sample_unbalanced_matches_oracle() {
    let mut r = lcg(11);
    let x: Vec<bool> = (0..13).map(|i| i % 3 == 0).collect();
    let v = DMatrix::from_fn(13, 3, |_, _| r());
    let (joint, _) = estimate_two_sample(&two_sample(v.clone(), x.clone())).unwrap();
    for c in 0..3 {
        let y1: Vec<f64> = (0..13).filter(|&i| x[i]).map(|i| v[(i, c)]).collect();
        let y0: Vec<f64> = (0..13).filter(|&i| !x[i]).map(|i| v[(i, c)]).collect();
        let oracle = two_group_variance_oracle(&y1, &y0);
        assert!((joint.sigma[(c, c)] - oracle).abs() < 1e-13 * oracle.max(1.0));
        let diff = y1.iter().sum::<f64>() / y1.len() as f64 - y0.iter().sum::<f64>() / y0.len() as f64;
        assert!((joint.psi_hat[c] - diff).abs() < 1e-14);
    }
}

#[test]
fn identical_groups_are_degenerate() {
    let v = DMatrix::from_element(4, 1, 3.0);
    let (joint, _) = estimate_two_sample(&two_sample(v, vec![true, false, true, false])).unwrap();
    assert_eq!((joint.psi_hat[0], joint.se[0]), (0.0, 0.0));
}

#[test]
fn influence_covariance_matches_textbook_oracle() {
    let mut r = lcg(5);
    let raw = DMatrix::from_fn(50, 4, |_, _| r());
    // centre columns so the matrix is a valid influence matrix
    let phi = DMatrix::from_fn(50, 4, |i, j| raw[(i, j)] - raw.column(j).mean());
    let infl = InfluenceMatrix::new(phi.clone(), names("p", 4), names("s", 50)).unwrap();
    let joint = influence_to_joint(&infl, &DVector::zeros(4)).unwrap();
    let oracle = mean_covariance_oracle(&phi);
    assert!((joint.sigma.clone() - oracle).amax() < 1e-12);
}

#[test]
fn influence_orthogonal_and_identical_columns() {
    let phi = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
    let infl = InfluenceMatrix::new(phi, names("p", 3), names("s", 4)).unwrap();
    let joint = influence_to_joint(&infl, &DVector::zeros(3)).unwrap();
    let r = correlation_of(&joint).unwrap();
    assert_eq!(r[(0, 1)], 1.0);
    assert_eq!(joint.sigma[(0, 2)], 0.0);
}

#[test]
fn uncentered_influence_is_rejected() {
    let phi = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
    assert!(InfluenceMatrix::new(phi, names("p", 1), names("s", 3)).is_err());
}

#[test]
fn correlation_examples() {
    let j = JointEstimates::from_covariance(names("p", 2), DVector::zeros(2), DMatrix::identity(2, 2), 5).unwrap();
    assert_eq!(correlation_of(&j).unwrap(), DMatrix::identity(2, 2));
    let j = JointEstimates::from_covariance(
        names("p", 2),
        DVector::zeros(2),
        DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 4.0]),
        5,
    )
    .unwrap();
    assert!((correlation_of(&j).unwrap()[(0, 1)] - 0.5).abs() < 1e-15);
}

#[test]
fn contrast_examples() {
    let j = JointEstimates::from_covariance(
        names("p", 2),
        DVector::from_column_slice(&[1.0, 0.0]),
        DMatrix::identity(2, 2),
        5,
    )
    .unwrap();
    let c = contrast(&j, 0, 1).unwrap();
    assert_eq!(c.estimate, 1.0);
    assert!((c.se - 2f64.sqrt()).abs() < 1e-15);
    assert!(contrast(&j, 0, 0).is_err());

    // correlated pipelines with equal marginals give a smaller contrast variance
    let corr = JointEstimates::from_covariance(
        names("p", 2),
        DVector::from_column_slice(&[1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]),
        5,
    )
    .unwrap();
    assert!(contrast(&corr, 0, 1).unwrap().variance < c.variance);

    // identical columns: zero variance, undefined p-value
    let v = DMatrix::from_fn(5, 2, |i, _| i as f64);
    let (same, _) = estimate_one_sample(&one_sample(v), 0.0).unwrap();
    let c = contrast(&same, 0, 1).unwrap();
    assert_eq!((c.estimate, c.se), (0.0, 0.0));
    assert!(c.p_value().is_err());
}

#[test]
fn records_round_trip() {
    let v = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.5);
    let d = two_sample(v, vec![true, false, true]);
    assert_eq!(Dataset::from_records(&d.records()).unwrap(), d);
}

#[test]
fn record_errors() {
    let rec = |s: &str, p: &str, v: f64| Record {
        subject: s.into(),
        pipeline: p.into(),
        value: v,
        exposure: None,
    };
    let dup = [rec("a", "x", 1.0), rec("a", "x", 2.0), rec("b", "x", 1.0)];
    assert!(Dataset::from_records(&dup).unwrap_err().to_string().contains("rows 1 and 2"));
    let missing = [rec("a", "x", 1.0), rec("a", "y", 2.0), rec("b", "x", 1.0)];
    assert!(Dataset::from_records(&missing).unwrap_err().to_string().contains("(b, y)"));
    let nan = [rec("a", "x", f64::NAN), rec("b", "x", 1.0)];
    assert!(Dataset::from_records(&nan).is_err());
    let single = [rec("a", "x", 1.0)];
    assert!(Dataset::from_records(&single).is_err());
}

fn matrix_strategy(max_n: usize, max_j: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (3..=max_n, 1..=max_j).prop_flat_map(|(n, j)| {
        prop::collection::vec(-100.0..100.0f64, n * j).prop_map(move |v| DMatrix::from_vec(n, j, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_leaves_two_sample_joint_unchanged(v in matrix_strategy(12, 4), shift in -50.0..50.0f64, col in 0usize..4) {
        let (n, j) = v.shape();
        let col = col % j;
        let x: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let mut w = v.clone();
        for i in 0..n { w[(i, col)] += shift; }
        let (a, _) = estimate_two_sample(&two_sample(v, x.clone())).unwrap();
        let (b, _) = estimate_two_sample(&two_sample(w, x)).unwrap();
        let scale = a.sigma.amax().max(1e-300);
        prop_assert!((a.sigma - b.sigma).amax() <= 1e-9 * scale);
        prop_assert!((a.psi_hat[col] - b.psi_hat[col]).abs() <= 1e-9 * (1.0 + a.psi_hat[col].abs()));
    }

    #[test]
    fn diagonal_is_plug_in_variance_over_n(v in matrix_strategy(15, 4)) {
        let (n, j) = v.shape();
        let (joint, _) = estimate_one_sample(&one_sample(v.clone()), 0.0).unwrap();
        for c in 0..j {
            let m = v.column(c).mean();
            let pop = v.column(c).iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!((joint.sigma[(c, c)] - pop / n as f64).abs() <= 1e-12 * (1.0 + pop));
            prop_assert!((joint.se[c].powi(2) - joint.sigma[(c, c)]).abs() <= 1e-10 * (1.0 + joint.sigma[(c, c)]));
        }
        prop_assert!((joint.sigma.clone() - joint.sigma.transpose()).amax() == 0.0);
    }

    #[test]
    fn correlation_is_scale_invariant(v in matrix_strategy(12, 3), scale in 0.01..100.0f64) {
        let (n, j) = v.shape();
        prop_assume!((0..j).all(|c| v.column(c).variance() > 1e-6));
        let mut w = v.clone();
        for i in 0..n { w[(i, 0)] *= scale; }
        let (a, _) = estimate_one_sample(&one_sample(v), 0.0).unwrap();
        let (b, _) = estimate_one_sample(&one_sample(w), 0.0).unwrap();
        let ra = correlation_of(&a).unwrap();
        let rb = correlation_of(&b).unwrap();
        prop_assert!((ra - rb).amax() < 1e-9);
    }

    #[test]
    fn t_stats_are_ratios(v in matrix_strategy(10, 3)) {
        let (joint, _) = estimate_one_sample(&one_sample(v), 1.0).unwrap();
        for c in 0..joint.n_pipelines() {
            if joint.se[c] > 0.0 {
                prop_assert_eq!(joint.t_stats[c], joint.psi_hat[c] / joint.se[c]);
            }
        }
    }
}
