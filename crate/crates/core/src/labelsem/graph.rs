use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Relations retained when building visual-similarity embeddings.
pub const VISUAL_RELATIONS: [&str; 7] = [
    "SimilarTo",
    "InstanceOf",
    "IsA",
    "FormOf",
    "Synonym",
    "EtymologicallyRelatedTo",
    "DefinedAs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub relation: String,
    pub weight: f64,
}

/// Weighted, relation-labelled term graph. Self loops are dropped on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    edges: Vec<Edge>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_edge(
        &mut self,
        a: impl Into<String>,
        b: impl Into<String>,
        relation: impl Into<String>,
        weight: f64,
    ) -> Result<()> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "edge weight must be positive and finite, got {weight}"
            )));
        }
        let (a, b) = (a.into(), b.into());
        if a != b {
            self.edges.push(Edge {
                a,
                b,
                relation: relation.into(),
                weight,
            });
        }
        Ok(())
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Terms in first-appearance order.
    pub fn terms(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            for t in [&e.a, &e.b] {
                if seen.insert(t.as_str()) {
                    out.push(t.as_str());
                }
            }
        }
        out
    }

    /// Keeps only edges whose relation is whitelisted, preserving order.
    pub fn filter<S: AsRef<str>>(&self, whitelist: &[S]) -> Result<KnowledgeGraph> {
        if whitelist.is_empty() {
            return Err(Error::InvalidArgument("relation whitelist is empty".into()));
        }
        let allowed: HashSet<&str> = whitelist.iter().map(AsRef::as_ref).collect();
        Ok(KnowledgeGraph {
            edges: self
                .edges
                .iter()
                .filter(|e| allowed.contains(e.relation.as_str()))
                .cloned()
                .collect(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    /// Parses `relation<TAB>term_a<TAB>term_b[<TAB>weight]` lines; a missing
    /// weight defaults to 1.
    pub fn parse(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut graph = KnowledgeGraph::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let weight = match cols.len() {
                3 => 1.0,
                4 if cols[3].trim().is_empty() => 1.0,
                4 => cols[3].trim().parse::<f64>().map_err(|_| {
                    Error::parse(path, lineno, format!("invalid weight `{}`", cols[3]))
                })?,
                n => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected 3 or 4 tab-separated columns, found {n}"),
                    ))
                }
            };
            graph
                .add_edge(cols[1], cols[2], cols[0], weight)
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        Ok(graph)
    }
}

/// Free-function form of [`KnowledgeGraph::filter`].
pub fn filter_graph<S: AsRef<str>>(graph: &KnowledgeGraph, whitelist: &[S]) -> Result<KnowledgeGraph> {
    graph.filter(whitelist)
}
