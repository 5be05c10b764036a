//! Undirected graphs and the graph filters built from them.
//!
//! Filter kinds:
//!
//! | tag            | matrix                              | degrees from |
//! |----------------|-------------------------------------|--------------|
//! | `adj_plus_id`  | `A + I`                             | none         |
//! | `sym_plus_id`  | `D^{-1/2} A D^{-1/2} + I`           | `A`          |
//! | `rw_plus_id`   | `D^{-1} A + I`                      | `A`          |
//! | `sym_selfloop` | `D~^{-1/2} (A + I) D~^{-1/2}`       | `A + I`      |
//!
//! Filters are stored sparse (with their transpose) so that graphs with tens of
//! thousands of nodes stay cheap; [`FilterMatrix::to_dense`] materializes one.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_norm_with, CsrMatrix, LinearOperator, Matrix, PowerOptions};

/// Simple undirected graph with canonical `(u, v)`, `u < v` edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    dropped_self_loops: usize,
    dropped_duplicates: usize,
}

impl Graph {
    /// Canonicalizes and deduplicates the edges. Self-loops are dropped and
    /// counted; filters add their own.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Empty("graph"));
        }
        let mut canon = Vec::new();
        let mut loops = 0;
        let mut raw = 0;
        for (u, v) in edges {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(Error::NodeOutOfRange { node, num_nodes });
                }
            }
            if u == v {
                loops += 1;
                continue;
            }
            raw += 1;
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Graph {
            num_nodes,
            dropped_duplicates: raw - canon.len(),
            edges: canon,
            dropped_self_loops: loops,
        })
    }

    /// Parses the edge-list text format: one whitespace-separated `u v` pair
    /// per line, 0-indexed, `#` starts a comment. The node count defaults to
    /// one past the largest index seen.
    pub fn parse_edge_list(text: &str, source_name: &str, num_nodes: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_node = None;
        for (lineno, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err(format!("expected `u v`, found {} fields", fields.len())));
            }
            let mut ends = [0usize; 2];
            for (slot, f) in ends.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| parse_err(format!("`{f}` is not a node index")))?;
            }
            max_node = Some(max_node.unwrap_or(0).max(ends[0]).max(ends[1]));
            edges.push((ends[0], ends[1]));
        }
        let n = match (num_nodes, max_node) {
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => {
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    line: 0,
                    message: "no edges and no node count".into(),
                })
            }
        };
        Graph::new(n, edges)
    }

    pub fn read_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::parse_edge_list(&text, &path.display().to_string(), num_nodes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    /// Input pairs that repeated an edge already seen (either orientation).
    pub fn dropped_duplicates(&self) -> usize {
        self.dropped_duplicates
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Subgraph induced by `keep`, relabeled in the given order.
    pub fn induced(&self, keep: &[usize]) -> Result<Graph> {
        let mut map = vec![usize::MAX; self.num_nodes];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: old,
                    num_nodes: self.num_nodes,
                });
            }
            map[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| map[*u] != usize::MAX && map[*v] != usize::MAX)
            .map(|&(u, v)| (map[u], map[v]));
        Graph::new(keep.len(), edges)
    }
}

/// Registered graph filter kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    AdjPlusId,
    SymPlusId,
    RwPlusId,
    SymSelfloop,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::AdjPlusId,
        FilterKind::SymPlusId,
        FilterKind::RwPlusId,
        FilterKind::SymSelfloop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::AdjPlusId => "adj_plus_id",
            FilterKind::SymPlusId => "sym_plus_id",
            FilterKind::RwPlusId => "rw_plus_id",
            FilterKind::SymSelfloop => "sym_selfloop",
        }
    }

    /// Whether the realized matrix is symmetric.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, FilterKind::RwPlusId)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "filter kind",
                    format!("`{s}` (expected one of adj_plus_id, sym_plus_id, rw_plus_id, sym_selfloop)"),
                )
            })
    }
}

/// A realized N x N filter with its cached spectral norm `C_g`.
#[derive(Debug, Clone)]
pub struct FilterMatrix {
    kind: Option<FilterKind>,
    csr: CsrMatrix,
    csr_t: CsrMatrix,
    c_g: f64,
    power: PowerOptions,
}

impl FilterMatrix {
    /// Wraps an arbitrary square matrix; `kind()` is then `None`.
    pub fn from_dense(m: &Matrix, power: &PowerOptions) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::dim("FilterMatrix::from_dense", format!("{}x{} is not square", m.rows(), m.cols())));
        }
        FilterMatrix::from_csr(None, CsrMatrix::from_dense(m), power)
    }

    fn from_csr(kind: Option<FilterKind>, csr: CsrMatrix, power: &PowerOptions) -> Result<Self> {
        let c_g = spectral_norm_with(&csr, power)?;
        let csr_t = csr.transpose();
        Ok(FilterMatrix {
            kind,
            csr,
            csr_t,
            c_g,
            power: *power,
        })
    }

    pub fn kind(&self) -> Option<FilterKind> {
        self.kind
    }

    /// Label for reports: the kind tag or `custom`.
    pub fn label(&self) -> &'static str {
        self.kind.map_or("custom", FilterKind::as_str)
    }

    pub fn num_nodes(&self) -> usize {
        self.csr.nrows()
    }

    pub fn c_g(&self) -> f64 {
        self.c_g
    }

    /// Options used to compute the cached `C_g`.
    pub fn power_options(&self) -> &PowerOptions {
        &self.power
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn csr_transpose(&self) -> &CsrMatrix {
        &self.csr_t
    }

    pub fn to_dense(&self) -> Matrix {
        self.csr.to_dense()
    }

    /// `g X`
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.csr.mul_dense(x)
    }

    /// `g^T X`
    pub fn apply_transpose(&self, x: &Matrix) -> Result<Matrix> {
        self.csr_t.mul_dense(x)
    }

    /// Recomputes the spectral norm with other settings.
    pub fn recompute_norm(&self, power: &PowerOptions) -> Result<f64> {
        spectral_norm_with(&self.csr, power)
    }
}

impl LinearOperator for FilterMatrix {
    fn nrows(&self) -> usize {
        self.csr.nrows()
    }

    fn ncols(&self) -> usize {
        self.csr.ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.csr.apply(x, y)
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.csr.apply_transpose(x, y)
    }
}

/// Builds a filter with default power-iteration settings.
pub fn build_filter(g: &Graph, kind: FilterKind) -> Result<FilterMatrix> {
    build_filter_with(g, kind, &PowerOptions::default())
}

pub fn build_filter_with(g: &Graph, kind: FilterKind, power: &PowerOptions) -> Result<FilterMatrix> {
    let n = g.num_nodes();
    let deg = g.degrees();
    if matches!(kind, FilterKind::SymPlusId | FilterKind::RwPlusId) {
        if let Some(node) = deg.iter().position(|&d| d == 0) {
            return Err(Error::IsolatedNode {
                node,
                kind: kind.to_string(),
            });
        }
    }
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * g.num_edges() + n);
    let inv_sqrt = |d: usize| 1.0 / (d as f64).sqrt();
    for &(u, v) in g.edges() {
        let (wuv, wvu) = match kind {
            FilterKind::AdjPlusId => (1.0, 1.0),
            FilterKind::SymPlusId => {
                let w = inv_sqrt(deg[u]) * inv_sqrt(deg[v]);
                (w, w)
            }
            FilterKind::RwPlusId => (1.0 / deg[u] as f64, 1.0 / deg[v] as f64),
            FilterKind::SymSelfloop => {
                let w = inv_sqrt(deg[u] + 1) * inv_sqrt(deg[v] + 1);
                (w, w)
            }
        };
        t.push((u, v, wuv));
        t.push((v, u, wvu));
    }
    for (i, &d) in deg.iter().enumerate() {
        let diag = match kind {
            FilterKind::SymSelfloop => 1.0 / (d + 1) as f64,
            _ => 1.0,
        };
        t.push((i, i, diag));
    }
    let csr = CsrMatrix::from_triplets(n, n, t)?;
    FilterMatrix::from_csr(Some(kind), csr, power)
}

/// Cached spectral norm of a built filter.
pub fn filter_norm(f: &FilterMatrix) -> f64 {
    f.c_g()
}
