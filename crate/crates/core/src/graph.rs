//! Undirected weighted graphs and the matrices derived from them.
//!
//! Pixel grids map to graphs row-major: pixel `(r, c)` is node `r * width + c`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, DenseMatrix};

/// Pixel neighbourhood used when turning a raster grid into a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub fn as_u32(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }

    pub fn from_u32(k: u32) -> Result<Self> {
        match k {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u32())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("connectivity must be 4 or 8, got {s:?}")))?;
        Self::from_u32(k)
    }
}

/// Undirected graph stored as an edge list with `i < j`.
///
/// The adjacency matrix is implied symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    /// Validates and normalizes an edge list. Endpoints are reordered so the
    /// smaller index comes first; self-loops, negative or non-finite weights
    /// and repeated edges are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut normalized = Vec::new();
        for (a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) has invalid weight {w}"
                )));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            normalized.push((i, j, w));
        }
        Ok(Self {
            n,
            edges: normalized,
        })
    }

    /// Unit-weight graph from `(i, j)` pairs.
    pub fn unweighted(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(n, pairs.into_iter().map(|(i, j)| (i, j, 1.0)))
    }

    pub fn path(n: usize) -> Self {
        Self::unweighted(n, (1..n).map(|i| (i - 1, i))).expect("path graph is valid")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 nodes");
        Self::unweighted(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle graph is valid")
    }

    pub fn complete(n: usize) -> Self {
        Self::unweighted(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
            .expect("complete graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::InvalidDimension(format!(
                "permutation of length {} for graph with {} nodes",
                perm.len(),
                self.n
            )));
        }
        Self::new(
            self.n,
            self.edges.iter().map(|&(i, j, w)| (perm[i], perm[j], w)),
        )
    }

    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.edges {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    /// Weighted degree of every node, `D_ii = Σ_j A_ij`.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, j, w) in &self.edges {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// Dense unnormalized Laplacian `L = D − A`.
    pub fn laplacian(&self) -> DenseMatrix {
        let mut l = DenseMatrix::zeros(self.n, self.n);
        for &(i, j, w) in &self.edges {
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    pub fn laplacian_sparse(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.n + 2 * self.edges.len());
        for (i, d) in self.degrees().into_iter().enumerate() {
            t.push((i, i, d));
        }
        for &(i, j, w) in &self.edges {
            t.push((i, j, -w));
            t.push((j, i, -w));
        }
        CsrMatrix::from_triplets(self.n, t).expect("indices validated at construction")
    }

    /// Triplets of `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃_ii = 1 + Σ_j A_ij`.
    fn renormalized_triplets(&self) -> Vec<(usize, usize, f64)> {
        let d_tilde: Vec<f64> = self.degrees().into_iter().map(|d| d + 1.0).collect();
        let mut t = Vec::with_capacity(self.n + 2 * self.edges.len());
        for (i, &d) in d_tilde.iter().enumerate() {
            t.push((i, i, 1.0 / d));
        }
        for &(i, j, w) in &self.edges {
            let v = w / (d_tilde[i] * d_tilde[j]).sqrt();
            t.push((i, j, v));
            t.push((j, i, v));
        }
        t
    }

    /// Dense renormalized adjacency `Â = D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I`.
    pub fn renormalized_adjacency(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.renormalized_triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Sparse form of [`Graph::renormalized_adjacency`], used on the hot path.
    pub fn renormalized_adjacency_sparse(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n, self.renormalized_triplets())
            .expect("indices validated at construction")
    }

    /// True when every node is reachable from node 0 through positive-weight edges.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, w) in &self.edges {
            if w > 0.0 {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Pixel-grid graph with unit weights, nodes in row-major order.
pub fn build_grid_graph(height: usize, width: usize, connectivity: Connectivity) -> Result<Graph> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimension(format!(
            "grid must be at least 1x1, got {height}x{width}"
        )));
    }
    let idx = |r: usize, c: usize| r * width + c;
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if c + 1 < width {
                edges.push((idx(r, c), idx(r, c + 1), 1.0));
            }
            if r + 1 < height {
                edges.push((idx(r, c), idx(r + 1, c), 1.0));
            }
            if connectivity == Connectivity::Eight && r + 1 < height {
                if c + 1 < width {
                    edges.push((idx(r, c), idx(r + 1, c + 1), 1.0));
                }
                if c > 0 {
                    edges.push((idx(r, c), idx(r + 1, c - 1), 1.0));
                }
            }
        }
    }
    Ok(Graph {
        n: height * width,
        edges,
    })
}
