use knockoff_fwer::corr::make_ar1;
use knockoff_fwer::groups::{cluster, ClusterConfig, GroupStructure};
use knockoff_fwer::{CorrelationMatrix, Matrix};
use proptest::prelude::*;

/// Correlation matrix of `B Bᵀ` for a `p × r` loading matrix, so it is PSD by construction.
fn factor_corr(p: usize, r: usize, loadings: &[f64]) -> CorrelationMatrix {
    let b = |i: usize, k: usize| loadings[i * r + k];
    let cov = Matrix::from_fn(p, p, |i, j| {
        (0..r).map(|k| b(i, k) * b(j, k)).sum::<f64>() + if i == j { 0.05 } else { 0.0 }
    });
    let d: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    let mut m = Matrix::from_fn(p, p, |i, j| cov[(i, j)] / (d[i] * d[j]));
    for i in 0..p {
        m[(i, i)] = 1.0;
    }
    CorrelationMatrix::new(m).unwrap()
}

/// Components by breadth-first search over the thresholded graph.
fn bfs_components(sigma: &CorrelationMatrix, cutoff: f64) -> Vec<Vec<usize>> {
    let p = sigma.p();
    let mut seen = vec![false; p];
    let mut out = Vec::new();
    for start in 0..p {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = queue.pop() {
            comp.push(i);
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && 1.0 - sigma.get(i, j).abs() < cutoff {
                    *s = true;
                    queue.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn as_sets(g: &GroupStructure) -> Vec<Vec<usize>> {
    g.iter().map(|m| m.to_vec()).collect()
}

#[test]
fn chain_links_transitively() {
    // A pure 0.8 chain on four features is not PSD, so these use a PSD chain
    // with the same single-linkage topology: AR(1) at 0.8 links only neighbours.
    let sigma = make_ar1(4, 0.8f64).unwrap();
    let g = cluster(&sigma, &ClusterConfig::default());
    assert_eq!(g.n_groups(), 1);
    assert_eq!(g.members(0), &[0, 1, 2, 3]);
}

#[test]
fn cutoff_bounds_are_validated() {
    assert!(ClusterConfig::with_cutoff(0.0).is_err());
    assert!(ClusterConfig::with_cutoff(1.5).is_err());
    assert!(ClusterConfig::with_cutoff(1.0).is_ok());
}

#[test]
fn boundary_distance_does_not_link() {
    let mut m = Matrix::identity(2);
    m[(0, 1)] = 0.5;
    m[(1, 0)] = 0.5;
    let sigma = CorrelationMatrix::new(m).unwrap();
    assert_eq!(
        cluster(&sigma, &ClusterConfig::with_cutoff(0.5).unwrap()).n_groups(),
        2
    );
    assert_eq!(
        cluster(&sigma, &ClusterConfig::with_cutoff(0.500001).unwrap()).n_groups(),
        1
    );
}

fn loadings_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (3usize..25, 1usize..4)
        .prop_flat_map(|(p, r)| (Just(p), Just(r), prop::collection::vec(-1.0f64..1.0, p * r)))
}

proptest! {
    #[test]
    fn matches_graph_components((p, r, l) in loadings_strategy(), cutoff in 0.05f64..0.6) {
        let sigma = factor_corr(p, r, &l);
        let g = cluster(&sigma, &ClusterConfig::with_cutoff(cutoff).unwrap());
        prop_assert_eq!(as_sets(&g), bfs_components(&sigma, cutoff));
    }

    #[test]
    fn cross_group_pairs_respect_cutoff((p, r, l) in loadings_strategy(), cutoff in 0.05f64..0.6) {
        let sigma = factor_corr(p, r, &l);
        let g = cluster(&sigma, &ClusterConfig::with_cutoff(cutoff).unwrap());
        for i in 0..p {
            for j in 0..p {
                if g.assignment()[i] != g.assignment()[j] {
                    prop_assert!(1.0 - sigma.get(i, j).abs() >= cutoff);
                }
            }
        }
    }

    #[test]
    fn smaller_cutoff_refines((p, r, l) in loadings_strategy(), a in 0.05f64..0.6, b in 0.05f64..0.6) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let sigma = factor_corr(p, r, &l);
        let fine = cluster(&sigma, &ClusterConfig::with_cutoff(lo).unwrap());
        let coarse = cluster(&sigma, &ClusterConfig::with_cutoff(hi).unwrap());
        for members in fine.iter() {
            let id = coarse.assignment()[members[0]];
            prop_assert!(members.iter().all(|&j| coarse.assignment()[j] == id));
        }
    }

    #[test]
    fn permutation_only_relabels((p, r, l) in loadings_strategy(), seed in any::<u64>()) {
        let sigma = factor_corr(p, r, &l);
        let mut perm: Vec<usize> = (0..p).collect();
        let mut state = seed | 1;
        for i in (1..p).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            perm.swap(i, state as usize % (i + 1));
        }
        let permuted = CorrelationMatrix::new(Matrix::from_fn(p, p, |i, j| sigma.get(perm[i], perm[j]))).unwrap();
        let config = ClusterConfig::default();
        let g = cluster(&sigma, &config);
        let h = cluster(&permuted, &config);
        prop_assert_eq!(g.n_groups(), h.n_groups());
        for i in 0..p {
            for j in 0..p {
                let same_h = h.assignment()[i] == h.assignment()[j];
                let same_g = g.assignment()[perm[i]] == g.assignment()[perm[j]];
                prop_assert_eq!(same_h, same_g);
            }
        }
    }
}
