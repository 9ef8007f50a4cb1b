//! Retrofitting of distributional embeddings onto a knowledge graph.
//!
//! Minimizes
//!
//! ```text
//! E(v) = sum_i alpha_i |v_i - v̂_i|^2 + sum_{(i,j) in edges} beta_ij |v_i - v_j|^2
//! ```
//!
//! by exact block-coordinate descent: each sweep visits the terms in vocabulary
//! order and replaces `v_i` by `(alpha_i v̂_i + sum_j beta_ij v_j) / (alpha_i + sum_j beta_ij)`
//! using the latest neighbour values. Each edge contributes once to the sum.
//! Terms that only occur in the graph get `alpha_i = 0` and start at the origin.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{EmbeddingMatrix, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrofitConfig {
    /// Weight of the original vector for terms present in the embedding vocabulary.
    pub alpha_present: f64,
    pub max_iters: usize,
    /// Stop once the largest per-term displacement of a sweep is at most `tol`.
    pub tol: f64,
}

impl Default for RetrofitConfig {
    fn default() -> Self {
        Self {
            alpha_present: 1.0,
            max_iters: 10,
            tol: 1e-6,
        }
    }
}

impl RetrofitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) || !(self.alpha_present >= 0.0) {
            return Err(Error::InvalidArgument(
                "tol and alpha_present must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a retrofit run with its per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct RetrofitReport {
    pub embeddings: EmbeddingMatrix,
    /// Objective value before the first sweep followed by its value after each sweep.
    pub objective: Vec<f64>,
    /// Largest per-term displacement of each sweep.
    pub displacement: Vec<f64>,
}

struct Problem {
    vocab: Vec<String>,
    alpha: Vec<f64>,
    original: Vec<f64>,
    neighbours: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize, f64)>,
    dim: usize,
}

impl Problem {
    fn build(emb: &EmbeddingMatrix, graph: &KnowledgeGraph, cfg: &RetrofitConfig) -> Self {
        let dim = emb.dim();
        let mut vocab: Vec<String> = emb.vocab().to_vec();
        let mut index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut alpha = vec![cfg.alpha_present; vocab.len()];
        let mut original: Vec<f64> = emb.iter().flat_map(|(_, v)| v.iter().copied()).collect();

        let mut id = |term: &str, vocab: &mut Vec<String>, alpha: &mut Vec<f64>, original: &mut Vec<f64>| {
            *index.entry(term.to_string()).or_insert_with(|| {
                vocab.push(term.to_string());
                alpha.push(0.0);
                original.extend(std::iter::repeat_n(0.0, dim));
                vocab.len() - 1
            })
        };
        let mut edges = Vec::with_capacity(graph.len());
        for e in graph.edges() {
            let a = id(&e.a, &mut vocab, &mut alpha, &mut original);
            let b = id(&e.b, &mut vocab, &mut alpha, &mut original);
            edges.push((a, b, e.weight));
        }
        let mut neighbours = vec![Vec::new(); vocab.len()];
        for &(a, b, w) in &edges {
            neighbours[a].push((b, w));
            neighbours[b].push((a, w));
        }
        Self {
            vocab,
            alpha,
            original,
            neighbours,
            edges,
            dim,
        }
    }

    /// Every connected component must contain a term with positive alpha.
    fn check_anchored(&self) -> Result<()> {
        let n = self.vocab.len();
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut anchored = false;
            while let Some(i) = stack.pop() {
                anchored |= self.alpha[i] > 0.0;
                for &(j, _) in &self.neighbours[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            // isolated terms keep their original vector whatever alpha is
            if !anchored && !self.neighbours[start].is_empty() {
                return Err(Error::UnanchoredComponent(self.vocab[start].clone()));
            }
        }
        Ok(())
    }

    fn objective(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let anchor: f64 = (0..self.vocab.len())
            .filter(|&i| self.alpha[i] > 0.0)
            .map(|i| self.alpha[i] * sq_dist(&v[i * d..(i + 1) * d], &self.original[i * d..(i + 1) * d]))
            .sum();
        let smooth: f64 = self
            .edges
            .iter()
            .map(|&(a, b, w)| w * sq_dist(&v[a * d..(a + 1) * d], &v[b * d..(b + 1) * d]))
            .sum();
        anchor + smooth
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn retrofit(
    emb: &EmbeddingMatrix,
    graph: &KnowledgeGraph,
    cfg: &RetrofitConfig,
) -> Result<EmbeddingMatrix> {
    retrofit_with_report(emb, graph, cfg).map(|r| r.embeddings)
}

pub fn retrofit_with_report(
    emb: &EmbeddingMatrix,
    graph: &KnowledgeGraph,
    cfg: &RetrofitConfig,
) -> Result<RetrofitReport> {
    cfg.validate()?;
    let problem = Problem::build(emb, graph, cfg);
    problem.check_anchored()?;

    let d = problem.dim;
    let mut v = problem.original.clone();
    let mut objective = vec![problem.objective(&v)];
    let mut displacement = Vec::new();
    let mut update = vec![0.0; d];
    for _ in 0..cfg.max_iters {
        let mut max_move = 0.0f64;
        for i in 0..problem.vocab.len() {
            let nbrs = &problem.neighbours[i];
            if nbrs.is_empty() {
                continue;
            }
            let alpha = problem.alpha[i];
            let mut denom = alpha;
            for (u, o) in update.iter_mut().zip(&problem.original[i * d..(i + 1) * d]) {
                *u = alpha * o;
            }
            for &(j, w) in nbrs {
                denom += w;
                for (u, x) in update.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                    *u += w * x;
                }
            }
            let row = &mut v[i * d..(i + 1) * d];
            let mut moved = 0.0;
            for (x, u) in row.iter_mut().zip(&update) {
                let next = u / denom;
                moved += (next - *x) * (next - *x);
                *x = next;
            }
            max_move = max_move.max(moved.sqrt());
        }
        objective.push(problem.objective(&v));
        displacement.push(max_move);
        if max_move <= cfg.tol {
            break;
        }
    }

    let mut out = EmbeddingMatrix::new(d);
    for (i, term) in problem.vocab.iter().enumerate() {
        out.push(term.clone(), &v[i * d..(i + 1) * d])?;
    }
    Ok(RetrofitReport {
        embeddings: out,
        objective,
        displacement,
    })
}

/// Objective value of `candidate` for the problem defined by `original` and `graph`.
pub fn retrofit_objective(
    original: &EmbeddingMatrix,
    graph: &KnowledgeGraph,
    cfg: &RetrofitConfig,
    candidate: &EmbeddingMatrix,
) -> Result<f64> {
    let problem = Problem::build(original, graph, cfg);
    let d = problem.dim;
    let mut v = vec![0.0; problem.vocab.len() * d];
    for (i, term) in problem.vocab.iter().enumerate() {
        let row = candidate
            .get(term)
            .ok_or_else(|| Error::InvalidArgument(format!("candidate lacks term `{term}`")))?;
        v[i * d..(i + 1) * d].copy_from_slice(row);
    }
    Ok(problem.objective(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_terms() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(2, [("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]).unwrap()
    }

    #[test]
    fn isolated_term_is_unchanged() {
        let emb = two_terms();
        let out = retrofit(&emb, &KnowledgeGraph::new(), &RetrofitConfig::default()).unwrap();
        assert_eq!(out, emb);
    }

    #[test]
    fn two_node_closed_form() {
        // stationarity: a = (â + b)/2, b = (b̂ + a)/2  =>  a = (2â + b̂)/3
        let mut g = KnowledgeGraph::new();
        g.add_edge("a", "b", "IsA", 1.0).unwrap();
        let cfg = RetrofitConfig {
            max_iters: 200,
            tol: 1e-12,
            ..Default::default()
        };
        let out = retrofit(&two_terms(), &g, &cfg).unwrap();
        let a = out.get("a").unwrap();
        let b = out.get("b").unwrap();
        for (got, want) in a.iter().chain(b).zip([2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn absent_terms_are_added_and_interpolated() {
        let mut g = KnowledgeGraph::new();
        g.add_edge("a", "hub", "IsA", 1.0).unwrap();
        g.add_edge("b", "hub", "IsA", 1.0).unwrap();
        let cfg = RetrofitConfig {
            max_iters: 500,
            tol: 1e-12,
            ..Default::default()
        };
        let out = retrofit(&two_terms(), &g, &cfg).unwrap();
        assert_eq!(out.vocab(), &["a", "b", "hub"]);
        let hub = out.get("hub").unwrap();
        assert!((hub[0] - 0.5).abs() < 1e-9 && (hub[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unanchored_component_is_an_error() {
        let mut g = KnowledgeGraph::new();
        g.add_edge("x", "y", "IsA", 1.0).unwrap();
        let err = retrofit(&two_terms(), &g, &RetrofitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnanchoredComponent(_)));
    }

    #[test]
    fn stops_at_tolerance() {
        let mut g = KnowledgeGraph::new();
        g.add_edge("a", "b", "IsA", 1.0).unwrap();
        let cfg = RetrofitConfig {
            max_iters: 1000,
            tol: 1e-3,
            ..Default::default()
        };
        let report = retrofit_with_report(&two_terms(), &g, &cfg).unwrap();
        assert!(report.displacement.len() < 1000);
        assert!(*report.displacement.last().unwrap() <= 1e-3);
    }
}
