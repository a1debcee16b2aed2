//! Singular values against an independent dense eigen-solver.

use hyperclone_core::cloning::{expand_linear, make_clone_map, Strategy};
use hyperclone_core::tensor::{gaussian, singular_values, Matrix, Rng};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Singular values as square roots of the eigenvalues of `AᵀA`, descending.
fn oracle(a: &Matrix<f64>) -> Vec<f64> {
    let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
    let gram = m.transpose() * &m;
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn zeros_below(values: &[f64], rel: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    values.iter().filter(|&&v| v <= rel * top).count()
}

#[test]
fn symmetric_clone_of_full_rank_4x4_has_four_zero_values() {
    let w: Matrix<f64> = gaussian(&mut Rng::seed(11), 4, 4, 1.0);
    let map = make_clone_map(4, 2);
    let (wd, _) = expand_linear(&w, None, &map, &map, Strategy::Symmetric, 10.0, &mut Rng::seed(0)).unwrap();
    let ours = singular_values(&wd).unwrap();
    let theirs = oracle(&wd);
    assert_eq!(ours.len(), 8);
    assert_eq!(zeros_below(&ours, 1e-6), 4, "{ours:?}");
    assert_eq!(zeros_below(&theirs, 1e-6), 4, "{theirs:?}");
    for (a, b) in ours.iter().zip(&theirs).take(4) {
        assert!((a - b).abs() <= 1e-9 * theirs[0], "{ours:?} vs {theirs:?}");
    }
    // The source is full rank: the four surviving values are not small.
    assert_eq!(zeros_below(&singular_values(&w).unwrap(), 1e-6), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_eigen_oracle(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, scale in -6i32..6) {
        let a: Matrix<f64> = gaussian(&mut Rng::seed(seed), rows, cols, 10f64.powi(scale));
        let ours = singular_values(&a).unwrap();
        let theirs = oracle(&a);
        prop_assert_eq!(ours.len(), rows.min(cols));
        prop_assert!(ours.windows(2).all(|w| w[0] >= w[1]));
        // The Gram matrix squares the condition number, so small values are
        // only comparable to the oracle in absolute terms.
        let tol = 1e-7 * theirs[0];
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= tol, "{:?} vs {:?}", ours, theirs);
        }
        let fro: f64 = a.as_slice().iter().map(|v| v * v).sum();
        let sum: f64 = ours.iter().map(|v| v * v).sum();
        prop_assert!((fro - sum).abs() <= 1e-9 * fro);
    }

    #[test]
    fn clone_rank_follows_block_structure(seed in any::<u64>(), n in 2usize..6, fold in 2usize..4, diagonal in any::<bool>()) {
        let w: Matrix<f64> = gaussian(&mut Rng::seed(seed), n, n, 1.0);
        let map = make_clone_map(n, fold);
        let strategy = if diagonal { Strategy::Diagonal } else { Strategy::Symmetric };
        let (wd, _) = expand_linear(&w, None, &map, &map, strategy, 10.0, &mut Rng::seed(0)).unwrap();
        let values = singular_values(&wd).unwrap();
        let rank = values.len() - zeros_below(&values, 1e-6);
        let src_rank = n - zeros_below(&singular_values(&w).unwrap(), 1e-6);
        // Symmetric blocks are all equal; diagonal places `fold` copies on
        // the block diagonal.
        let expected = if diagonal { fold * src_rank } else { src_rank };
        prop_assert_eq!(rank, expected);
    }
}
