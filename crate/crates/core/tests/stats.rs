use knockoff_fwer::corr::make_ar1;
use knockoff_fwer::groups::GroupStructure;
use knockoff_fwer::stats::{
    group_chi_square, group_knockoff_stats, knockoff_stats, ChiSquarePower, GroupChiSquare,
};
use knockoff_fwer::{CorrelationMatrix, KnockoffScores, Matrix};
use proptest::prelude::*;

fn row_stats(row: &[f64]) -> (usize, f64) {
    let s = knockoff_stats(&KnockoffScores::from_rows(&[row]).unwrap()).unwrap();
    (s.kappa()[0], s.tau()[0])
}

#[test]
fn hand_traced_rows() {
    assert_eq!(row_stats(&[3.0, 1.0, -1.0, 0.0]), (0, 8.0));
    assert_eq!(row_stats(&[0.0, 0.0, 0.0, 0.0]), (0, 0.0));
    assert_eq!(row_stats(&[1.0, -2.0]), (1, 3.0));
}

#[test]
fn chi_square_against_explicit_inverse() {
    let sigma = make_ar1(6, 0.6f64).unwrap();
    let groups = GroupStructure::from_assignment(vec![0, 0, 1, 1, 1, 2]).unwrap();
    let z = [0.3, -1.2, 2.0, 0.5, -0.7, 1.1];
    let chi = group_chi_square(&z, &sigma, &groups).unwrap();
    // 2×2 closed form for the first block
    let r = 0.6;
    let expected0 = (z[0] * z[0] - 2.0 * r * z[0] * z[1] + z[1] * z[1]) / (1.0 - r * r);
    assert!((chi[0] - expected0).abs() < 1e-12);
    assert!((chi[2] - z[5] * z[5]).abs() < 1e-12);
    // AR(1) precision for the 3-block: tridiagonal with 1, 1+r², 1 on the diagonal
    let (a, b, c) = (z[2], z[3], z[4]);
    let expected1 =
        (a * a + (1.0 + r * r) * b * b + c * c - 2.0 * r * (a * b + b * c)) / (1.0 - r * r);
    assert!((chi[1] - expected1).abs() < 1e-12);
}

#[test]
fn apply_all_matches_per_copy() {
    let sigma = CorrelationMatrix::new(Matrix::identity(4)).unwrap();
    let groups = GroupStructure::from_assignment(vec![0, 0, 1, 1]).unwrap();
    let scores =
        KnockoffScores::from_columns(vec![vec![1.0, 2.0, 0.0, 1.0], vec![0.0, 0.0, 3.0, 0.0]])
            .unwrap();
    let chi = GroupChiSquare::new(&sigma, &groups)
        .unwrap()
        .apply_all(&scores)
        .unwrap();
    assert_eq!(chi.column(0), &[5.0, 1.0]);
    assert_eq!(chi.column(1), &[0.0, 9.0]);
    let s = group_knockoff_stats(&chi, ChiSquarePower::Two).unwrap();
    assert_eq!(s.kappa(), &[0, 1]);
    assert_eq!(s.tau(), &[25.0, 80.0]);
}

proptest! {
    #[test]
    fn permuting_knockoff_columns_permutes_kappa(
        row in prop::collection::vec(-5.0f64..5.0, 3..10),
        seed in any::<u64>(),
    ) {
        let m = row.len() - 1;
        let mut perm: Vec<usize> = (1..=m).collect();
        let mut state = seed;
        for i in (1..perm.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let mut permuted = vec![row[0]];
        permuted.extend(perm.iter().map(|&c| row[c]));
        let (k0, t0) = row_stats(&row);
        let (k1, t1) = row_stats(&permuted);
        prop_assert_eq!(t0, t1);
        let squares: Vec<f64> = row.iter().map(|x| x * x).collect();
        let max = squares.iter().cloned().fold(f64::MIN, f64::max);
        let unique = squares.iter().filter(|&&x| x == max).count() == 1;
        if unique {
            let back = if k1 == 0 { 0 } else { perm[k1 - 1] };
            prop_assert_eq!(back, k0);
        }
    }

    #[test]
    fn scaling_scores_scales_tau(row in prop::collection::vec(-5.0f64..5.0, 2..10), c in 0.1f64..10.0) {
        let scaled: Vec<f64> = row.iter().map(|x| x * c).collect();
        let (k0, t0) = row_stats(&row);
        let (k1, t1) = row_stats(&scaled);
        prop_assert_eq!(k0, k1);
        prop_assert!((t1 - c * c * t0).abs() <= 1e-9 * (1.0 + t1.abs()));
        prop_assert!(t0 >= 0.0);
    }
}
