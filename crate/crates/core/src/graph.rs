//! Graph topology and the two adjacency normalizations used by the models.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `D^{-1/2} (I + A) D^{-1/2}` with `D` the degree matrix of `I + A`.
pub fn sym_normalize(adjacency: &Matrix) -> Result<Matrix> {
    if !adjacency.is_square() {
        return Err(Error::dim("sym_normalize", "square", format!("{:?}", adjacency.shape())));
    }
    let n = adjacency.rows();
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + adjacency.row(i).iter().sum::<f64>())
        .collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = adjacency[(i, j)] + if i == j { 1.0 } else { 0.0 };
            out[(i, j)] = inv_sqrt[i] * a * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Divides every row with positive sum by that sum; all-zero rows stay zero.
pub fn row_normalize(adjacency: &Matrix) -> Result<Matrix> {
    if !adjacency.is_square() {
        return Err(Error::dim("row_normalize", "square", format!("{:?}", adjacency.shape())));
    }
    let mut out = adjacency.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphTopology {
    adjacency: Matrix,
    normalized_sym: Matrix,
    normalized_row: Matrix,
}

impl GraphTopology {
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::dim("GraphTopology", "square adjacency", format!("{:?}", adjacency.shape())));
        }
        if !adjacency.is_finite() || adjacency.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("adjacency entries must be finite and nonnegative".into()));
        }
        if adjacency.diagonal().iter().any(|&d| d != 0.0) {
            return Err(Error::InvalidConfig("adjacency must have a zero diagonal".into()));
        }
        let normalized_sym = sym_normalize(&adjacency)?;
        let normalized_row = row_normalize(&adjacency)?;
        Ok(Self {
            adjacency,
            normalized_sym,
            normalized_row,
        })
    }

    /// Undirected 0/1 graph from an edge list.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Matrix::zeros(n_nodes, n_nodes);
        for &(i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::InvalidConfig(format!("edge ({i}, {j}) out of range for {n_nodes} nodes")));
            }
            if i == j {
                return Err(Error::InvalidConfig(format!("self-loop on node {i}")));
            }
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        Self::from_adjacency(a)
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self::from_adjacency(Matrix::zeros(n_nodes, n_nodes)).expect("empty graph is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// Symmetric normalization with self-loops.
    pub fn normalized_sym(&self) -> &Matrix {
        &self.normalized_sym
    }

    /// Row-stochastic normalization without self-loops.
    pub fn normalized_row(&self) -> &Matrix {
        &self.normalized_row
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] != 0.0 || self.adjacency[(j, i)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && (self.adjacency[(u, v)] > 0.0 || self.adjacency[(v, u)] > 0.0) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        if perm.len() != n {
            return Err(Error::dim("permuted", n, perm.len()));
        }
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.adjacency[(perm[i], perm[j])];
            }
        }
        Self::from_adjacency(a)
    }
}
