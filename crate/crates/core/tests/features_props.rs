mod common;

use affectlab::analysis::{knn_loocv, KnnConfig};
use affectlab::features::*;
use affectlab::linalg::Matrix;
use proptest::prelude::*;

fn data(seed: u64, n: usize, d: usize) -> Matrix {
    let mut r = common::rng(seed);
    let base = common::random_matrix(&mut r, n, d);
    // Give the columns different scales and some correlation.
    Matrix::from_fn(n, d, |i, j| (j as f64 + 1.0) * base.get(i, j) + 0.5 * base.get(i, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eigenvalues_sum_to_the_dimension(seed in any::<u64>(), n in 12usize..40, d in 2usize..8) {
        let pca = fit_pca(&data(seed, n, d), 1).unwrap();
        // Standardized covariance has unit diagonal.
        let total: f64 = pca.eigenvalues.iter().sum();
        prop_assert!((total - d as f64).abs() < 1e-8);
        prop_assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn components_are_orthonormal_with_positive_leading_entry(seed in any::<u64>(), d in 2usize..7) {
        let pca = fit_pca(&data(seed, 30, d), d).unwrap();
        let c = &pca.components;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|j| c.get(j, a) * c.get(j, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
            let col = c.column(a);
            let big = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            prop_assert!(big > 0.0);
        }
    }

    #[test]
    fn full_rank_transform_inverts(seed in any::<u64>()) {
        let x = data(seed, 25, 4);
        let pca = fit_pca(&x, 4).unwrap();
        for row in x.row_iter() {
            let back = pca.inverse(&pca.transform(row).unwrap()).unwrap();
            for (a, b) in back.iter().zip(row) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quantile_scaled_median_is_zero(seed in any::<u64>(), n in 3usize..40) {
        let x = data(seed, n, 3);
        let s = fit_quantile_scaler(&x, 0.25, 0.75).unwrap();
        let y = s.apply_matrix(&x).unwrap();
        for j in 0..3 {
            let mut col = y.column(j);
            col.sort_by(f64::total_cmp);
            prop_assert!(quantile_sorted(&col, 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn rank_one_data_has_one_component() {
    let x = Matrix::from_fn(20, 3, |i, j| (i as f64 - 7.0) * [1.0, -2.0, 0.5][j]);
    let pca = fit_pca(&x, 1).unwrap();
    assert!((pca.cumulative_ratio(1) - 1.0).abs() < 1e-12);
}

#[test]
fn pca_argument_checks() {
    let x = data(1, 5, 3);
    assert!(fit_pca(&x, 0).is_err());
    assert!(fit_pca(&x, 4).is_err());
    assert!(fit_pca(&x.slice_rows(0, 1), 1).is_err());
}

#[test]
fn quantile_hand_example() {
    let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [100.0]]).unwrap();
    let s = fit_quantile_scaler(&x, 0.25, 0.75).unwrap();
    assert_eq!(s.median, vec![3.0]);
    assert_eq!(s.iqr, vec![2.0]);
    assert_eq!(s.apply(&[5.0]).unwrap(), vec![1.0]);
}

#[test]
fn knn_after_scaling_equals_knn_on_prescaled_input() {
    let mut r = common::rng(3);
    let (x, labels) = common::clusters(&mut r, &[vec![0.0, 0.0], vec![1.0, 10.0], vec![2.0, 0.0]], 15, 1.0);
    let s = fit_quantile_scaler(&x, 0.25, 0.75).unwrap();
    let manual = Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - s.median[j]) / s.iqr[j]);
    let a = knn_loocv(&s.apply_matrix(&x).unwrap(), &labels, KnnConfig::default()).unwrap();
    let b = knn_loocv(&manual, &labels, KnnConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn preprocessing_chains_scaler_then_pca() {
    let x = data(9, 30, 4);
    let pre = Preprocessing::fit(&x, true, Some(2)).unwrap();
    let scaled = pre.quantile.as_ref().unwrap().apply_matrix(&x).unwrap();
    let want = pre.pca.as_ref().unwrap().transform_matrix(&scaled).unwrap();
    assert_eq!(pre.apply(&x).unwrap(), want);
    assert_eq!(pre.output_dim(4), 2);
    assert!(Preprocessing::fit(&x, false, None).unwrap().is_identity());
}
