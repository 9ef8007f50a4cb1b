//! Density-based grouping of label embeddings under cosine distance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labelsem::LabelMatrix;
use crate::matrix::{dot, norm};

/// Radius used for most label sets.
pub const DEFAULT_EPS: f64 = 0.2;
/// Every label with at least one other label within `eps` is a core point.
pub const MIN_POINTS: usize = 2;

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 1.0;
    }
    (1.0 - (dot(a, b) / denom).clamp(-1.0, 1.0)).clamp(0.0, 2.0)
}

/// Partition of `K` classes into `Q` groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelGrouping {
    assignments: Vec<usize>,
    num_groups: usize,
    eps: f64,
}

impl LabelGrouping {
    /// Builds a grouping from arbitrary ids, renumbering groups by their
    /// smallest member index.
    pub fn from_assignments(raw: &[usize], eps: f64) -> Self {
        let mut remap = std::collections::HashMap::new();
        let assignments = raw
            .iter()
            .map(|&g| {
                let next = remap.len();
                *remap.entry(g).or_insert(next)
            })
            .collect();
        Self {
            assignments,
            num_groups: remap.len(),
            eps,
        }
    }

    /// Every class in its own group.
    pub fn singletons(k: usize) -> Self {
        Self {
            assignments: (0..k).collect(),
            num_groups: k,
            eps: 0.0,
        }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn group_of(&self, class: usize) -> usize {
        self.assignments[class]
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_classes(&self) -> usize {
        self.assignments.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Class indices of each group, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups];
        for (k, &g) in self.assignments.iter().enumerate() {
            out[g].push(k);
        }
        out
    }

    /// The K×Q binary assignment matrix.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        self.assignments
            .iter()
            .map(|&g| (0..self.num_groups).map(|q| u8::from(q == g)).collect())
            .collect()
    }
}

/// DBSCAN cluster ids over a precomputed distance matrix; `None` marks noise.
///
/// Neighbourhoods include the point itself. Core points are merged into
/// clusters through their core neighbours; a border point joins the cluster of
/// its lowest-index core neighbour.
pub fn dbscan(distances: &[Vec<f64>], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = distances.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || distances[i][j] <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_points).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in (0..n).filter(|&i| core[i]) {
        for &j in neighbours[i].iter().filter(|&&j| core[j]) {
            let (a, b) = (root(&mut parent, i), root(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(root(&mut parent, i))
            } else {
                neighbours[i]
                    .iter()
                    .find(|&&j| core[j])
                    .map(|&j| root(&mut parent, j))
            }
        })
        .collect()
}

pub fn cosine_distances(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| cosine_distance(a, b)).collect())
        .collect()
}

/// Groups the rows of `m` with DBSCAN (`min_points = 2`) under cosine
/// distance. Noise points become singleton groups; groups are numbered by
/// their smallest member index.
pub fn group_labels(m: &LabelMatrix, eps: f64) -> Result<LabelGrouping> {
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must be in [0, 2], got {eps}")));
    }
    let rows: Vec<&[f64]> = (0..m.num_classes()).map(|k| m.row(k)).collect();
    Ok(group_rows(&rows, eps))
}

pub(crate) fn group_rows(rows: &[&[f64]], eps: f64) -> LabelGrouping {
    let clusters = dbscan(&cosine_distances(rows), eps, MIN_POINTS);
    let n = rows.len();
    // noise points get ids past every cluster root
    let raw: Vec<usize> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| c.unwrap_or(n + i))
        .collect();
    LabelGrouping::from_assignments(&raw, eps)
}

/// Group scores `Gᵀp`.
pub fn group_scores(p: &[f64], grouping: &LabelGrouping) -> Result<Vec<f64>> {
    if p.len() != grouping.num_classes() {
        return Err(Error::Shape(format!(
            "{} class scores for {} classes",
            p.len(),
            grouping.num_classes()
        )));
    }
    let mut g = vec![0.0; grouping.num_groups()];
    for (k, &pk) in p.iter().enumerate() {
        g[grouping.group_of(k)] += pk;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn labels(rows: &[Vec<f64>]) -> LabelMatrix {
        let names = (0..rows.len()).map(|i| format!("c{i}")).collect();
        LabelMatrix::new(names, Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn eps_zero_gives_singletons() {
        let m = labels(&[vec![1.0, 0.0], vec![0.99, 0.1], vec![0.0, 1.0]]);
        let g = group_labels(&m, 0.0).unwrap();
        assert_eq!(g.num_groups(), 3);
        assert_eq!(g.assignments(), &[0, 1, 2]);
    }

    #[test]
    fn close_pair_groups_and_ids_follow_smallest_member() {
        let m = labels(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.99, 0.1]]);
        let g = group_labels(&m, 0.2).unwrap();
        assert_eq!(g.assignments(), &[0, 1, 1]);
        assert_eq!(g.matrix(), vec![vec![1, 0], vec![0, 1], vec![0, 1]]);
        assert_eq!(g.members(), vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn group_scores_add_within_groups() {
        let g = LabelGrouping::from_assignments(&[0, 1, 1, 2], 0.2);
        let s = group_scores(&[0.1, 0.40, 0.35, 0.15], &g).unwrap();
        assert!((s[1] - 0.75).abs() < 1e-12);
        assert!(group_scores(&[1.0], &g).is_err());
        let id = LabelGrouping::singletons(3);
        assert_eq!(group_scores(&[0.2, 0.3, 0.5], &id).unwrap(), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn uniform_scores_count_members() {
        let g = LabelGrouping::from_assignments(&[3, 3, 7, 3, 9], 0.2);
        let s = group_scores(&[0.2; 5], &g).unwrap();
        for (q, members) in g.members().iter().enumerate() {
            assert!((s[q] - members.len() as f64 / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn border_point_joins_lowest_core_neighbour() {
        // 0.45 is a border point of the cores at 0.1 and 0.8
        let xs = [0.0, 0.05, 0.1, 0.45, 0.8, 0.85, 0.9];
        let dist: Vec<Vec<f64>> = xs
            .iter()
            .map(|&a| xs.iter().map(|&b| f64::abs(a - b)).collect())
            .collect();
        let c = dbscan(&dist, 0.36, 4);
        assert_eq!(c[3], c[2]);
        assert_ne!(c[3], c[4]);
        assert!(c.iter().all(Option::is_some));
    }
}
