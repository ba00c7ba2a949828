//! Undirected weighted communication graphs.
//!
//! A valid graph is connected, has symmetric positive weights on its edges and
//! every row of weights sums to strictly less than one. Under those
//! conditions `I - L` is doubly stochastic with a positive diagonal and the
//! consensus iteration contracts disagreement by the factor
//! `beta = max(|1 - lambda_2|, |1 - lambda_n|)` per step.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::streams::{stream_rng, GRAPH_STREAM};

/// Tolerance on the zero Laplacian eigenvalue.
pub const ZERO_EIGEN_TOL: f64 = 1e-10;
/// Connectivity retries for random graphs.
pub const ER_RETRIES: usize = 100;
/// Default `rho` in the random-graph weight rule `w = rho / (max degree + 1)`.
pub const DEFAULT_RHO: f64 = 0.9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("a graph needs at least 2 agents, got {0}")]
    TooSmall(usize),
    #[error("weight {0} must be finite and positive")]
    BadWeight(f64),
    #[error("row {row} weights sum to {sum}, which must be below 1")]
    RowSum { row: usize, sum: f64 },
    #[error("graph is not connected")]
    Disconnected,
    #[error("no connected draw after {0} attempts")]
    RetriesExhausted(usize),
    #[error("edge probability {0} must lie in (0, 1]; set `p` for random graphs")]
    BadProbability(f64),
    #[error("edge ({0}, {1}) is invalid")]
    BadEdge(usize, usize),
    #[error("eigensolver produced non-finite values")]
    Numerical,
}

/// Topology families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Cycle,
    Path,
    Complete,
    /// Each edge present independently; needs `p` in the spec.
    ErdosRenyi,
}

/// How edge weights are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// The same weight on every edge.
    Uniform(f64),
    /// `rho / (max degree + 1)` on every edge.
    MaxDegree(f64),
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule::MaxDegree(DEFAULT_RHO)
    }
}

/// Graph description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub n: usize,
    /// Edge probability for random graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub weight: WeightRule,
    #[serde(default)]
    pub seed: u64,
}

impl GraphSpec {
    pub fn cycle(n: usize, w: f64) -> Self {
        GraphSpec { kind: GraphKind::Cycle, n, p: None, weight: WeightRule::Uniform(w), seed: 0 }
    }

    pub fn path(n: usize, w: f64) -> Self {
        GraphSpec { kind: GraphKind::Path, n, p: None, weight: WeightRule::Uniform(w), seed: 0 }
    }

    pub fn complete(n: usize, weight: WeightRule) -> Self {
        GraphSpec { kind: GraphKind::Complete, n, p: None, weight, seed: 0 }
    }

    pub fn build(&self) -> Result<WeightedGraph, GraphError> {
        build_graph(self)
    }
}

/// A valid communication graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    /// Sorted edge list, `i < j`.
    edges: Vec<(usize, usize, f64)>,
    /// `adj[i]` = sorted `(j, w_ij)`.
    adj: Vec<Vec<(usize, f64)>>,
}

/// Laplacian spectrum and contraction factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    pub beta: f64,
}

/// Builds a graph from its description and validates it.
pub fn build_graph(spec: &GraphSpec) -> Result<WeightedGraph, GraphError> {
    let n = spec.n;
    if n < 2 {
        return Err(GraphError::TooSmall(n));
    }
    match spec.kind {
        GraphKind::Cycle => {
            let pairs: Vec<_> = if n == 2 {
                vec![(0, 1)]
            } else {
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            };
            with_rule(n, &pairs, spec.weight)
        }
        GraphKind::Path => {
            let pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            with_rule(n, &pairs, spec.weight)
        }
        GraphKind::Complete => {
            let pairs: Vec<_> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            with_rule(n, &pairs, spec.weight)
        }
        GraphKind::ErdosRenyi => {
            let p = spec.p.unwrap_or(f64::NAN);
            if !(p > 0.0 && p <= 1.0) {
                return Err(GraphError::BadProbability(p));
            }
            let mut rng = stream_rng(spec.seed, GRAPH_STREAM);
            for _ in 0..ER_RETRIES {
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.gen_bool(p) {
                            pairs.push((i, j));
                        }
                    }
                }
                match with_rule(n, &pairs, spec.weight) {
                    Err(GraphError::Disconnected) => continue,
                    other => return other,
                }
            }
            Err(GraphError::RetriesExhausted(ER_RETRIES))
        }
    }
}

fn with_rule(n: usize, pairs: &[(usize, usize)], rule: WeightRule) -> Result<WeightedGraph, GraphError> {
    let w = match rule {
        WeightRule::Uniform(w) => w,
        WeightRule::MaxDegree(rho) => {
            let mut deg = vec![0usize; n];
            for &(i, j) in pairs {
                deg[i] += 1;
                deg[j] += 1;
            }
            rho / (deg.iter().copied().max().unwrap_or(0) + 1) as f64
        }
    };
    WeightedGraph::from_edges(n, pairs.iter().map(|&(i, j)| (i, j, w)))
}

impl WeightedGraph {
    /// Validates an explicit weighted edge list (duplicates are rejected).
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n < 2 {
            return Err(GraphError::TooSmall(n));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a == b || a >= n || b >= n {
                return Err(GraphError::BadEdge(a, b));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::BadWeight(w));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if adj[i].iter().any(|&(k, _)| k == j) {
                return Err(GraphError::BadEdge(a, b));
            }
            adj[i].push((j, w));
            adj[j].push((i, w));
            list.push((i, j, w));
        }
        for row in adj.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
        }
        list.sort_by_key(|x| (x.0, x.1));
        for (row, nbrs) in adj.iter().enumerate() {
            let sum: f64 = nbrs.iter().map(|&(_, w)| w).sum();
            if sum >= 1.0 {
                return Err(GraphError::RowSum { row, sum });
            }
        }
        let g = WeightedGraph { n, edges: list, adj };
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted `(neighbour, weight)` pairs of agent `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adj
            .get(i)?
            .binary_search_by_key(&j, |&(k, _)| k)
            .ok()
            .map(|pos| self.adj[i][pos].1)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j).is_some()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Dense Laplacian: `L_ij = -w_ij`, `L_ii = sum_k w_ik`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.edges {
            l[(i, j)] = -w;
            l[(j, i)] = -w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    pub fn spectrum(&self) -> Result<SpectralSummary, GraphError> {
        let eigenvalues = sorted_eigenvalues(self.laplacian())?;
        let l2 = eigenvalues[1];
        let ln = eigenvalues[self.n - 1];
        let beta = (1.0 - l2).abs().max((1.0 - ln).abs());
        Ok(SpectralSummary { eigenvalues, beta })
    }

    pub fn contraction_factor(&self) -> Result<f64, GraphError> {
        Ok(self.spectrum()?.beta)
    }

    /// One line per agent: `i: j(w) k(w) ...`.
    pub fn adjacency_list(&self) -> String {
        let mut out = String::new();
        for (i, nbrs) in self.adj.iter().enumerate() {
            let _ = write!(out, "{i}:");
            for &(j, w) in nbrs {
                let _ = write!(out, " {j}({w})");
            }
            out.push('\n');
        }
        out
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(m: DMatrix<f64>) -> Result<Vec<f64>, GraphError> {
    let eig = SymmetricEigen::new(m);
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GraphError::Numerical);
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_ten() {
        let g = GraphSpec::cycle(10, 0.3).build().unwrap();
        assert_eq!(g.edge_count(), 10);
        for i in 0..10 {
            assert_eq!(g.degree(i), 2);
        }
        let l = g.laplacian();
        for i in 0..10 {
            assert!((l[(i, i)] - 0.6).abs() < 1e-15);
        }
        let s = g.spectrum().unwrap();
        // Circulant: 0.6 (1 - cos(2 pi k / 10)).
        let lambda2 = 0.6 * (1.0 - (2.0 * std::f64::consts::PI / 10.0).cos());
        assert!((s.eigenvalues[1] - lambda2).abs() < 1e-12);
        assert!((s.eigenvalues[9] - 1.2).abs() < 1e-12);
        assert!((s.beta - 0.88541).abs() < 1e-5);
        assert!(s.eigenvalues[0].abs() < ZERO_EIGEN_TOL);
    }

    #[test]
    fn path_two() {
        let g = GraphSpec::path(2, 0.4).build().unwrap();
        let l = g.laplacian();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[0.4, -0.4, -0.4, 0.4]));
        let s = g.spectrum().unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-15);
        assert!((s.eigenvalues[1] - 0.8).abs() < 1e-15);
        assert!((s.beta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn complete_three_and_five() {
        let g = GraphSpec::complete(3, WeightRule::Uniform(0.3)).build().unwrap();
        let s = g.spectrum().unwrap();
        assert!((s.eigenvalues[1] - 0.9).abs() < 1e-12);
        assert!((s.eigenvalues[2] - 0.9).abs() < 1e-12);
        assert!((s.beta - 0.1).abs() < 1e-12);
        let err = GraphSpec::complete(5, WeightRule::Uniform(0.3)).build().unwrap_err();
        match err {
            GraphError::RowSum { sum, .. } => assert!((sum - 1.2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn complete_with_default_rule() {
        let g = GraphSpec::complete(50, WeightRule::default()).build().unwrap();
        // Eigenvalues n w = 50 * 0.9 / 50 = 0.9.
        assert!((g.contraction_factor().unwrap() - 0.1).abs() < 1e-10);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(GraphSpec::cycle(1, 0.3).build().unwrap_err(), GraphError::TooSmall(1));
        assert_eq!(
            WeightedGraph::from_edges(4, [(0, 1, 0.2), (2, 3, 0.2)]).unwrap_err(),
            GraphError::Disconnected
        );
        assert!(matches!(
            WeightedGraph::from_edges(3, [(0, 1, -0.2), (1, 2, 0.2)]),
            Err(GraphError::BadWeight(_))
        ));
        assert!(matches!(
            WeightedGraph::from_edges(3, [(0, 1, 0.2), (1, 0, 0.2), (1, 2, 0.1)]),
            Err(GraphError::BadEdge(1, 0))
        ));
    }

    #[test]
    fn erdos_renyi_is_reproducible_and_valid() {
        let spec = GraphSpec {
            kind: GraphKind::ErdosRenyi,
            n: 20,
            p: Some(0.3),
            weight: WeightRule::default(),
            seed: 17,
        };
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        assert_eq!(a, b);
        let beta = a.contraction_factor().unwrap();
        assert!((0.0..1.0).contains(&beta));
        let sparse = GraphSpec { p: Some(0.001), ..spec };
        assert_eq!(sparse.build().unwrap_err(), GraphError::RetriesExhausted(ER_RETRIES));
    }

    #[test]
    fn spec_json_shape() {
        let spec: GraphSpec =
            serde_json::from_str(r#"{"kind":"cycle","n":10,"weight":{"uniform":0.3}}"#).unwrap();
        assert_eq!(spec, GraphSpec::cycle(10, 0.3));
        let er: GraphSpec =
            serde_json::from_str(r#"{"kind":"erdos-renyi","p":0.5,"n":6,"seed":3}"#).unwrap();
        assert_eq!(er.kind, GraphKind::ErdosRenyi);
        assert_eq!(er.p, Some(0.5));
        assert_eq!(er.weight, WeightRule::MaxDegree(0.9));
    }

    #[test]
    fn adjacency_export() {
        let g = GraphSpec::path(3, 0.25).build().unwrap();
        assert_eq!(g.adjacency_list(), "0: 1(0.25)\n1: 0(0.25) 2(0.25)\n2: 1(0.25)\n");
    }
}
