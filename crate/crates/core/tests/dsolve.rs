use knockoff_fwer::corr::{
    cholesky, inverse_spd, make_ar1, make_compound_symmetry, min_eigenvalue, CorrelationMatrix,
};
use knockoff_fwer::dsolve::{
    apply_group_perturbation, apply_perturbation, feasibility_margin, solve_equi, solve_group_equi,
    solve_sdp, SdpOptions,
};
use knockoff_fwer::groups::GroupStructure;
use knockoff_fwer::sampler::coupling_parts;
use knockoff_fwer::Matrix;
use proptest::prelude::*;

/// Gauss–Jordan inverse with partial pivoting, independent of the Cholesky path.
fn gauss_jordan(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut()
                    .zip(&pivot_row)
                    .for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| m[i][n + j])
}

#[test]
fn compound_symmetry_spectrum() {
    let s = make_compound_symmetry(100, 0.5f64).unwrap();
    assert!((s.min_eigenvalue().unwrap() - 0.5).abs() < 1e-10);
    assert!(make_compound_symmetry(3, 1.0f64).is_err());
}

#[test]
fn ar1_precision_is_tridiagonal() {
    let s = make_ar1(5, 0.5f64).unwrap();
    let inv = inverse_spd(&s).unwrap();
    assert!(inv.max_abs_diff(&gauss_jordan(s.as_matrix())) < 1e-12);
    for i in 0..5usize {
        for j in 0..5usize {
            if i.abs_diff(j) > 1 {
                assert!(inv[(i, j)].abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identity_block_factor() {
    let sigma = CorrelationMatrix::new(Matrix::identity(4)).unwrap();
    let parts = coupling_parts(&inverse_spd(&sigma).unwrap(), &Matrix::identity(4), 19).unwrap();
    let l = cholesky(&parts.block).unwrap();
    let expected = Matrix::identity(4).scale(1.0 / 19f64.sqrt());
    assert!(l.lower().max_abs_diff(&expected) < 1e-14);
}

#[test]
fn equi_examples() {
    let cs = make_compound_symmetry(100, 0.5f64).unwrap();
    let s = solve_equi(&cs, 19).unwrap();
    assert!(s
        .values()
        .iter()
        .all(|&x| (x - 20.0 / 19.0 * 0.5).abs() < 1e-10));
    let pair = make_ar1(2, 0.5f64).unwrap();
    assert!(solve_equi(&pair, 1)
        .unwrap()
        .values()
        .iter()
        .all(|&x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn sdp_small_examples() {
    let id = CorrelationMatrix::new(Matrix::identity(6)).unwrap();
    assert!(solve_sdp(&id, 19, &SdpOptions::default())
        .unwrap()
        .values()
        .iter()
        .all(|&x| x == 1.0));
    let pair = make_ar1(2, 0.5f64).unwrap();
    let s = solve_sdp(&pair, 1, &SdpOptions::default()).unwrap();
    assert!(s.values().iter().all(|&x| (x - 1.0).abs() < 1e-9));
    assert!(s.feasibility_margin() >= -1e-8);
}

// Optima from an interior-point solver run offline on the same matrices.
#[test]
fn sdp_close_to_interior_point_optimum() {
    let cases = [
        (make_ar1(20, 0.5f64).unwrap(), 19, 7.485379668),
        (make_ar1(100, 0.5f64).unwrap(), 19, 35.555555554),
        (make_ar1(30, 0.9f64).unwrap(), 3, 2.397254001),
        (
            make_compound_symmetry(50, 0.5f64).unwrap(),
            19,
            26.315789474,
        ),
        (make_ar1(50, 0.95f64).unwrap(), 19, 1.472991030),
        (make_ar1(50, 0.95f64).unwrap(), 1, 2.798682730),
        (make_ar1(60, 0.7f64).unwrap(), 9, 12.275201894),
    ];
    for (sigma, m, optimum) in cases {
        let s = solve_sdp(&sigma, m, &SdpOptions::default()).unwrap();
        let gap = (optimum - s.total()) / optimum;
        assert!(gap > -1e-5, "total {} above optimum {optimum}", s.total());
        assert!(gap < 1e-2, "total {} vs optimum {optimum}", s.total());
        assert!(feasibility_margin(&sigma, s.values(), m).unwrap() >= -1e-8);
    }
}

#[test]
fn sdp_dominates_equi_on_strong_compound_symmetry() {
    let cs = make_compound_symmetry(100, 0.9f64).unwrap();
    let sdp = solve_sdp(&cs, 19, &SdpOptions::default()).unwrap();
    let equi = solve_equi(&cs, 19).unwrap();
    assert!(sdp.total() >= equi.total() - 1e-9);
}

#[test]
fn sdp_is_bitwise_deterministic() {
    let sigma = make_ar1(40, 0.7f64).unwrap();
    let a = solve_sdp(&sigma, 19, &SdpOptions::default()).unwrap();
    let b = solve_sdp(&sigma, 19, &SdpOptions::default()).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.values()), bits(b.values()));
}

#[test]
fn perturbation_examples() {
    let sigma = make_ar1(2, 0.5f64).unwrap();
    let s = knockoff_fwer::SVector::from_values(&sigma, vec![1.0, 1.0], 1).unwrap();
    let shrunk = apply_perturbation(&sigma, &s, 0.9).unwrap();
    assert_eq!(shrunk.values(), &[0.9, 0.9]);
    assert_eq!(
        apply_perturbation(&sigma, &s, 1.0).unwrap().values(),
        s.values()
    );
    assert!(apply_perturbation(&sigma, &s, 0.0).is_err());
    assert!(apply_perturbation(&sigma, &s, 1.5).is_err());
}

#[test]
fn group_equi_examples() {
    let id = CorrelationMatrix::new(Matrix::identity(4)).unwrap();
    let d = solve_group_equi(&id, &GroupStructure::singletons(4), 19).unwrap();
    assert!(d.matrix().max_abs_diff(&Matrix::identity(4)) < 1e-12);

    let sigma = make_ar1(4, 0.5f64).unwrap();
    let one = GroupStructure::from_assignment(vec![0; 4]).unwrap();
    let d = solve_group_equi(&sigma, &one, 19).unwrap();
    assert!(d.matrix().max_abs_diff(sigma.as_matrix()) < 1e-10);

    let split = GroupStructure::from_assignment(vec![0, 0, 1, 1]).unwrap();
    let d = solve_group_equi(&sigma, &split, 19).unwrap();
    let constraint = sigma
        .as_matrix()
        .scale(20.0 / 19.0)
        .sub(d.matrix())
        .unwrap();
    assert!(min_eigenvalue(&constraint).unwrap() >= -1e-8);
    assert_eq!(d.matrix()[(0, 2)], 0.0);

    let shrunk = apply_group_perturbation(&sigma, &d, 0.5).unwrap();
    assert!(shrunk.matrix().max_abs_diff(&d.matrix().scale(0.5)) < 1e-15);
    assert!((shrunk.scale() - 0.5 * d.scale()).abs() < 1e-15);
    assert!(shrunk.feasibility_margin() >= d.feasibility_margin());
    assert!(apply_group_perturbation(&sigma, &d, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sdp_dominates_equi_on_ar1(p in 20usize..60, rho in 0.5f64..0.95, m in prop::sample::select(vec![1usize, 3, 9, 19])) {
        let sigma = make_ar1(p, rho).unwrap();
        let sdp = solve_sdp(&sigma, m, &SdpOptions::default()).unwrap();
        let equi = solve_equi(&sigma, m).unwrap();
        prop_assert!(sdp.total() >= equi.total() - 1e-9);
        prop_assert!(feasibility_margin(&sigma, sdp.values(), m).unwrap() >= -1e-8);
        prop_assert!(sdp.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn perturbation_never_shrinks_margin(p in 3usize..15, rho in 0.0f64..0.9, gamma in 0.05f64..1.0) {
        let sigma = make_ar1(p, rho).unwrap();
        let s = solve_sdp(&sigma, 19, &SdpOptions::default()).unwrap();
        let shrunk = apply_perturbation(&sigma, &s, gamma).unwrap();
        prop_assert!(shrunk.feasibility_margin() >= s.feasibility_margin() - 1e-12);
    }

    #[test]
    fn inverse_matches_gauss_jordan(p in 2usize..12, rho in -0.9f64..0.9) {
        let sigma = make_ar1(p, rho).unwrap();
        let inv = inverse_spd(&sigma).unwrap();
        prop_assert!(inv.max_abs_diff(&gauss_jordan(sigma.as_matrix())) < 1e-9);
    }
}
