//! Sparse graph operators.
//!
//! [`CsrMatrix`] holds the (constant) graph operator a filter is applied to:
//! the symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}`, its
//! half-scaled variant with spectrum in `[0, 1]`, or the Chebyshev-rescaled
//! `2L/λ_max - I` with spectrum in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};
use crate::tensor::Tensor;

/// Compressed sparse row matrix of `f64`.
///
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate positions
    /// are summed; explicit zeros are kept.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::InvalidArgument(format!(
                "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("non-empty") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Sparsifies a dense matrix, keeping only non-zero entries.
    pub fn from_dense(t: &Tensor) -> Self {
        let mut triplets = Vec::new();
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                let v = t.get(r, c);
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(t.rows(), t.cols(), triplets).expect("indices in range")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            out.set(r, c, out.get(r, c) + v);
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    /// Iterates stored entries as `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows)
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.col_idx[p], self.vals[p])))
    }

    /// Stored value at `(r, c)`, or 0.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match span.binary_search(&c) {
            Ok(p) => self.vals[self.row_ptr[r] + p],
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// `self · x` for a dense `x` with `cols` rows.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        shape_check("spmm", self.cols == x.rows(), (self.rows, self.cols), x.shape())?;
        let f = x.cols();
        let mut out = Tensor::zeros(self.rows, f);
        spmm_into(self, x.data(), out.data_mut(), f);
        Ok(out)
    }

    /// Multiplies every stored value by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= factor);
        Ok(out)
    }

    /// Returns `self + alpha·I`, materializing any missing diagonal entries.
    pub fn add_identity(&self, alpha: f64) -> Result<Self> {
        shape_check(
            "add_identity",
            self.rows == self.cols,
            (self.rows, self.cols),
            (self.rows, self.rows),
        )?;
        let mut triplets: Vec<_> = self.iter().collect();
        triplets.extend((0..self.rows).map(|i| (i, i, alpha)));
        Self::from_triplets(self.rows, self.cols, triplets)
    }
}

/// `out += s · x`, where `x` and `out` are row-major with `f` columns.
pub(crate) fn spmm_into(s: &CsrMatrix, x: &[f64], out: &mut [f64], f: usize) {
    for r in 0..s.rows {
        let out_row = &mut out[r * f..(r + 1) * f];
        for p in s.row_ptr[r]..s.row_ptr[r + 1] {
            let v = s.vals[p];
            let x_row = &x[s.col_idx[p] * f..(s.col_idx[p] + 1) * f];
            for (o, &xv) in out_row.iter_mut().zip(x_row) {
                *o += v * xv;
            }
        }
    }
}

/// `out += sᵀ · dy`.
pub(crate) fn spmm_transpose_into(s: &CsrMatrix, dy: &[f64], out: &mut [f64], f: usize) {
    for r in 0..s.rows {
        let dy_row = &dy[r * f..(r + 1) * f];
        for p in s.row_ptr[r]..s.row_ptr[r + 1] {
            let v = s.vals[p];
            let c = s.col_idx[p];
            let out_row = &mut out[c * f..(c + 1) * f];
            for (o, &g) in out_row.iter_mut().zip(dy_row) {
                *o += v * g;
            }
        }
    }
}

/// Simple undirected graph.
///
/// Edges are stored once as `(u, v)` with `u < v`, deduplicated, without
/// self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an arbitrary (possibly directed, duplicated,
    /// self-looped) edge list.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            num_nodes,
            edges: canon,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Both orientations of every edge.
    pub fn symmetric_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)])
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Applies a node relabeling: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Graph::new(self.num_nodes, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }
}

/// `L = I - D^{-1/2} A D^{-1/2}`. Isolated nodes get `L_ii = 1` and no
/// off-diagonal entries.
pub fn sym_normalized_laplacian(g: &Graph) -> Result<CsrMatrix> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    triplets.extend(g.symmetric_edges().map(|(u, v)| (u, v, -inv_sqrt[u] * inv_sqrt[v])));
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Multiplies the Laplacian by `factor`; 0.5 maps the `L_sym` spectrum onto
/// `[0, 1]`.
pub fn scale_laplacian(l: &CsrMatrix, factor: f64) -> Result<CsrMatrix> {
    l.scale(factor)
}

/// `2L/λ_max - I`, with every diagonal entry stored.
pub fn chebyshev_rescale(l: &CsrMatrix, lambda_max: f64) -> Result<CsrMatrix> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    l.scale(2.0 / lambda_max)?.add_identity(-1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> Graph {
        Graph::new(2, [(0, 1)]).unwrap()
    }

    #[test]
    fn path_laplacian() {
        let l = sym_normalized_laplacian(&path2()).unwrap();
        assert_eq!(l.to_dense(), Tensor::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]));
    }

    #[test]
    fn triangle_laplacian() {
        let g = Graph::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let l = sym_normalized_laplacian(&g).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!((l.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_gets_unit_diagonal() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let l = sym_normalized_laplacian(&g).unwrap();
        assert_eq!(l.get(2, 2), 1.0);
        assert_eq!(l.row_ptr()[3] - l.row_ptr()[2], 1);
    }

    #[test]
    fn edges_deduplicated_and_self_loops_dropped() {
        let g = Graph::new(3, [(0, 1), (1, 0), (0, 1), (2, 2), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(Graph::new(2, [(0, 2)]).is_err());
    }

    #[test]
    fn scaled_path() {
        let l = sym_normalized_laplacian(&path2()).unwrap();
        let s = scale_laplacian(&l, 0.5).unwrap();
        assert_eq!(s.to_dense(), Tensor::from_rows(&[&[0.5, -0.5], &[-0.5, 0.5]]));
        assert_eq!(scale_laplacian(&l, 1.0).unwrap(), l);
        assert!(scale_laplacian(&l, 0.0).is_err());
        assert!(scale_laplacian(&l, -1.0).is_err());
    }

    #[test]
    fn chebyshev_rescaled_path_and_isolated() {
        let l = sym_normalized_laplacian(&path2()).unwrap();
        let h = chebyshev_rescale(&l, 2.0).unwrap();
        assert_eq!(h.to_dense(), Tensor::from_rows(&[&[0.0, -1.0], &[-1.0, 0.0]]));

        let iso = sym_normalized_laplacian(&Graph::new(3, []).unwrap()).unwrap();
        assert_eq!(iso.to_dense(), Tensor::identity(3));
        let z = chebyshev_rescale(&iso, 2.0).unwrap();
        assert_eq!(z.to_dense(), Tensor::zeros(3, 3));
        assert_eq!(z.nnz(), 3, "diagonal stays materialized");
        assert!(chebyshev_rescale(&l, 0.0).is_err());
    }

    #[test]
    fn spmm_hand_product() {
        let s = CsrMatrix::from_dense(&Tensor::from_rows(&[&[0.5, -0.5], &[-0.5, 0.5]]));
        let y = s.spmm(&Tensor::from_rows(&[&[1.0], &[0.0]])).unwrap();
        assert_eq!(y, Tensor::from_rows(&[&[0.5], &[-0.5]]));
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(CsrMatrix::identity(2).spmm(&x).unwrap(), x);
        assert!(s.spmm(&Tensor::zeros(3, 1)).is_err());
    }

    #[test]
    fn triplets_sum_duplicates_and_sort_columns() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.col_idx(), &[0, 2]);
        assert_eq!(m.values(), &[2.0, 1.5]);
        assert_eq!(m.row_ptr(), &[0, 2, 2]);
    }
}
