mod common;

use common::{eigenvalues_bisection, normal_vec, rng, singular_values_oracle};
use dextr::linalg::{gram, spectrum, sym_eig, FeatureMatrix, SymMatrix};
use proptest::prelude::*;
use rand::Rng;

fn random_symmetric(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw = normal_vec(r, n * n);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (raw[i * n + j] + raw[j * n + i]);
        }
    }
    a
}

#[test]
fn jacobi_matches_bisection_on_indefinite_matrices() {
    let mut r = rng(11);
    for _ in 0..100 {
        let n = r.random_range(1..=10);
        let a = random_symmetric(&mut r, n);
        let got = sym_eig(&SymMatrix::new(n, a.clone()).unwrap()).unwrap();
        let want = eigenvalues_bisection(&a, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "n={n}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn singular_values_match_augmented_oracle() {
    let mut r = rng(12);
    for _ in 0..200 {
        let rows = r.random_range(1..=8);
        let cols = r.random_range(1..=12);
        let data = normal_vec(&mut r, rows * cols);
        let s = spectrum(&FeatureMatrix::new(rows, cols, data.clone()).unwrap()).unwrap();
        let want = singular_values_oracle(&data, rows, cols);
        assert_eq!(s.singular_values.len(), want.len());
        for (g, w) in s.singular_values.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "{rows}x{cols}: {:?} vs {want:?}", s.singular_values);
        }
    }
}

#[test]
fn duplicate_rows_have_zero_inverse_condition() {
    let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![-2.0, -4.0, -6.0]]).unwrap();
    let s = spectrum(&x).unwrap();
    assert_eq!(s.sigma_min, 0.0);
    assert_eq!(s.inv_cond, 0.0);
    assert!((s.sigma_max - (14.0f64 * 6.0).sqrt()).abs() < 1e-12);
}

#[test]
fn orthogonal_rows_are_perfectly_conditioned() {
    let x = FeatureMatrix::from_rows(&[vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, -3.0, 0.0]]).unwrap();
    let s = spectrum(&x).unwrap();
    assert!((s.inv_cond - 1.0).abs() < 1e-15);
    assert!((s.sigma_max - 3.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_condition_is_scale_invariant(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..12, k in prop::sample::select(vec![1e-3, 0.37, 7.5, 1e3])) {
        let mut r = rng(seed);
        let x = FeatureMatrix::new(rows, cols, normal_vec(&mut r, rows * cols)).unwrap();
        let a = spectrum(&x).unwrap().inv_cond;
        let b = spectrum(&x.scaled(k)).unwrap().inv_cond;
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn singular_values_sorted_and_preserve_frobenius(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..12) {
        let mut r = rng(seed);
        let x = FeatureMatrix::new(rows, cols, normal_vec(&mut r, rows * cols)).unwrap();
        let s = spectrum(&x).unwrap();
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        let sum_sq: f64 = s.singular_values.iter().map(|v| v * v).sum();
        prop_assert!((sum_sq - x.frobenius_sq()).abs() <= 1e-10 * x.frobenius_sq().max(1.0));
    }

    #[test]
    fn gram_is_symmetric_psd(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..12) {
        let mut r = rng(seed);
        let x = FeatureMatrix::new(rows, cols, normal_vec(&mut r, rows * cols)).unwrap();
        let g = gram(&x);
        for i in 0..rows {
            for j in 0..rows {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let eig = sym_eig(&g).unwrap();
        prop_assert!(eig[0] >= -1e-10 * eig[rows - 1].abs().max(1.0));
    }
}
