//! Graph neural network kernel: a differentiation tape, the graph layers,
//! the Q-network built from them, Adam and Xavier initialization.

mod adam;
pub mod layers;
mod network;
mod tape;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use network::{NetworkConfig, QNetwork};
pub use tape::{SparseMatrix, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("top-k selection is empty")]
    EmptySelection,
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Graph topology of a batch: directed edges (both directions stored for
/// undirected edges), their distances, and the node-to-graph assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub edge_attr: Vec<f64>,
    pub batch: Vec<usize>,
    pub n_graphs: usize,
}

impl Graph {
    pub fn new(
        n_nodes: usize,
        edges: Vec<[usize; 2]>,
        edge_attr: Vec<f64>,
        batch: Vec<usize>,
        n_graphs: usize,
    ) -> Result<Self, NnError> {
        if edges.len() != edge_attr.len() {
            return Err(NnError::Graph("one attribute per edge required".into()));
        }
        if let Some(e) = edges.iter().find(|e| e[0] >= n_nodes || e[1] >= n_nodes) {
            return Err(NnError::Graph(format!("edge {e:?} out of {n_nodes} nodes")));
        }
        if edge_attr.iter().any(|&d| !(d >= 0.0)) {
            return Err(NnError::Graph("edge distances must be non-negative".into()));
        }
        if batch.len() != n_nodes {
            return Err(NnError::Graph("batch assignment length".into()));
        }
        let mut seen = vec![false; n_graphs];
        for &g in &batch {
            *seen
                .get_mut(g)
                .ok_or_else(|| NnError::Graph(format!("graph {g} out of {n_graphs}")))? = true;
        }
        if seen.contains(&false) {
            return Err(NnError::Graph("graph without nodes".into()));
        }
        Ok(Graph {
            n_nodes,
            edges,
            edge_attr,
            batch,
            n_graphs,
        })
    }

    /// A single graph with all nodes in batch 0.
    pub fn single(
        n_nodes: usize,
        edges: Vec<[usize; 2]>,
        edge_attr: Vec<f64>,
    ) -> Result<Self, NnError> {
        Graph::new(n_nodes, edges, edge_attr, vec![0; n_nodes], 1)
    }

    /// Neighbor lists without self loops or duplicates, sorted.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes];
        for &[a, b] in &self.edges {
            if a != b {
                nb[a].push(b);
            }
        }
        for l in &mut nb {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }
}

/// Node features together with their graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub x: Array2<f64>,
    pub graph: Graph,
}

impl GraphBatch {
    pub fn new(x: Array2<f64>, graph: Graph) -> Result<Self, NnError> {
        if x.nrows() != graph.n_nodes {
            return Err(NnError::Shape(format!(
                "{} feature rows for {} nodes",
                x.nrows(),
                graph.n_nodes
            )));
        }
        Ok(GraphBatch { x, graph })
    }

    /// Disjoint union; graph `k` of the result is `parts[k]` (each part must hold one graph).
    pub fn concat(parts: &[&GraphBatch]) -> Result<Self, NnError> {
        let cols = parts.first().map_or(0, |p| p.x.ncols());
        if parts.iter().any(|p| p.x.ncols() != cols) {
            return Err(NnError::Shape("feature widths differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| NnError::Shape(e.to_string()))?;
        let (mut edges, mut attr, mut batch) = (Vec::new(), Vec::new(), Vec::new());
        let (mut offset, mut goff) = (0, 0);
        for p in parts {
            let g = &p.graph;
            edges.extend(g.edges.iter().map(|&[a, b]| [a + offset, b + offset]));
            attr.extend_from_slice(&g.edge_attr);
            batch.extend(g.batch.iter().map(|&b| b + goff));
            offset += g.n_nodes;
            goff += g.n_graphs;
        }
        let graph = Graph::new(offset, edges, attr, batch, goff)?;
        Ok(GraphBatch { x, graph })
    }
}

/// Xavier-normal sample: entries ~ N(0, gain² · 2 / (rows + cols)).
pub fn xavier_normal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Array2<f64> {
    let std = gain * (2.0 / (rows + cols) as f64).sqrt();
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}
