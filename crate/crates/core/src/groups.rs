//! Feature groups from single-linkage clustering on `1 - |correlation|`.
//!
//! Cutting a single-linkage dendrogram at height `h` yields exactly the
//! connected components of the graph with an edge wherever the distance is
//! below `h`, so no dendrogram is built: a union-find pass over the upper
//! triangle is enough.

use serde::{Deserialize, Serialize};

use crate::corr::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Partition of `{0, …, p-1}` into non-empty groups.
///
/// Group ids are ordered by smallest member, and member lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStructure {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Validates an assignment vector of group ids in `[0, G)` with no empty group.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        let g = assignment.iter().map(|&a| a + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); g];
        for (j, &a) in assignment.iter().enumerate() {
            members[a].push(j);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::Groups(format!("group {empty} has no members")));
        }
        Ok(Self {
            assignment,
            members,
        })
    }

    /// Relabels arbitrary labels so ids follow the smallest member index.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Self::from_assignment(assignment).expect("relabelled ids are dense")
    }

    pub fn singletons(p: usize) -> Self {
        Self::from_assignment((0..p).collect()).expect("singletons are valid")
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    #[inline]
    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.members.iter().map(Vec::as_slice)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub cutoff: f64,
    pub linkage: Linkage,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            cutoff: 0.25,
            linkage: Linkage::Single,
        }
    }
}

impl ClusterConfig {
    pub fn with_cutoff(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::Domain(format!(
                "cluster cutoff must lie in (0, 1], got {cutoff}"
            )));
        }
        Ok(Self {
            cutoff,
            ..Self::default()
        })
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] = self.rank[a].saturating_add(1);
            }
        }
    }
}

/// Groups features whose single-linkage distance `1 - |σ_ij|` falls strictly below the cutoff.
pub fn cluster<T: Scalar>(sigma: &CorrelationMatrix<T>, config: &ClusterConfig) -> GroupStructure {
    let p = sigma.p();
    let mut dsu = DisjointSet::new(p);
    let cutoff = config.cutoff;
    for i in 0..p {
        for j in (i + 1)..p {
            if 1.0 - sigma.get(i, j).abs().as_f64() < cutoff {
                dsu.union(i, j);
            }
        }
    }
    let labels: Vec<usize> = (0..p).map(|j| dsu.find(j)).collect();
    GroupStructure::from_labels(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{make_ar1, Matrix};

    fn corr_from(p: usize, pairs: &[(usize, usize, f64)]) -> CorrelationMatrix<f64> {
        let mut m = Matrix::identity(p);
        for &(i, j, r) in pairs {
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
        CorrelationMatrix::new(m).unwrap()
    }

    #[test]
    fn identity_gives_singletons() {
        let g = cluster(&corr_from(5, &[]), &ClusterConfig::default());
        assert_eq!(g, GroupStructure::singletons(5));
    }

    #[test]
    fn strong_pair_is_merged() {
        let g = cluster(&corr_from(3, &[(0, 1, 0.9)]), &ClusterConfig::default());
        assert_eq!(g.n_groups(), 2);
        assert_eq!(g.members(0), &[0, 1]);
        assert_eq!(g.members(1), &[2]);
    }

    #[test]
    fn negative_correlation_links_too() {
        let g = cluster(&corr_from(3, &[(1, 2, -0.95)]), &ClusterConfig::default());
        assert_eq!(g.assignment(), &[0, 1, 1]);
    }

    #[test]
    fn single_linkage_chains() {
        // σ_{i,i+1} = 0.45 keeps this PD while every adjacent distance is 0.55
        let sigma = corr_from(4, &[(0, 1, 0.45), (1, 2, 0.45), (2, 3, 0.45)]);
        let g = cluster(&sigma, &ClusterConfig::with_cutoff(0.6).unwrap());
        assert_eq!(g.n_groups(), 1);
        assert_eq!(g.members(0), &[0, 1, 2, 3]);
    }

    #[test]
    fn boundary_distance_is_not_linked() {
        // distance exactly equal to the cutoff: strict inequality keeps them apart
        let sigma = corr_from(2, &[(0, 1, 0.5)]);
        let g = cluster(&sigma, &ClusterConfig::with_cutoff(0.5).unwrap());
        assert_eq!(g.n_groups(), 2);
    }

    #[test]
    fn cutoff_domain() {
        assert!(ClusterConfig::with_cutoff(0.0).is_err());
        assert!(ClusterConfig::with_cutoff(1.5).is_err());
        assert!(ClusterConfig::with_cutoff(1.0).is_ok());
    }

    #[test]
    fn ar1_groups_are_contiguous_runs() {
        let sigma = make_ar1(10, 0.8).unwrap();
        let g = cluster(&sigma, &ClusterConfig::default());
        // only adjacent pairs (distance 0.2) link
        assert_eq!(g.n_groups(), 1);
        let g = cluster(&sigma, &ClusterConfig::with_cutoff(0.1).unwrap());
        assert_eq!(g.n_groups(), 10);
    }

    #[test]
    fn assignment_validation() {
        assert!(GroupStructure::from_assignment(vec![0, 2]).is_err());
        let g = GroupStructure::from_labels(&[7, 3, 7, 9]);
        assert_eq!(g.assignment(), &[0, 1, 0, 2]);
    }
}
