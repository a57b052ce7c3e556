//! User–item bipartite graph, compressed-row sparse matrices and the
//! self-looped symmetric normalization used for propagation.
//!
//! All vertices share one index space: users occupy `[0, |U|)` and items
//! `[|U|, |U| + |V|)`.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this many output entries spmm stays on the calling thread.
const PARALLEL_SPMM_THRESHOLD: usize = 1 << 16;

/// Deduplicated implicit-feedback records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    pairs: Vec<(usize, usize)>,
}

impl InteractionSet {
    /// Validates ranges and rejects duplicates. Deduplication is the
    /// ingestion layer's job, not this one's.
    pub fn new(num_users: usize, num_items: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(user, item) in &pairs {
            if user >= num_users || item >= num_items {
                return Err(Error::InteractionOutOfRange {
                    user,
                    item,
                    num_users,
                    num_items,
                });
            }
            if !seen.insert((user, item)) {
                return Err(Error::DuplicateInteraction { user, item });
            }
        }
        Ok(Self {
            num_users,
            num_items,
            pairs,
        })
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            pairs: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_vertices(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sorted item lists per user.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.pairs {
            out[u].push(i);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    /// Union of two disjoint sets over the same user/item universe.
    pub fn union(&self, other: &InteractionSet) -> Result<InteractionSet> {
        if self.num_users != other.num_users || self.num_items != other.num_items {
            return Err(Error::shape(
                "interaction union",
                format!("{}x{}", self.num_users, self.num_items),
                format!("{}x{}", other.num_users, other.num_items),
            ));
        }
        let mut pairs = self.pairs.clone();
        pairs.extend_from_slice(&other.pairs);
        InteractionSet::new(self.num_users, self.num_items, pairs)
    }
}

/// Compressed-row sparse matrix of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` entries in any order. Repeated
    /// coordinates are rejected.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if r >= rows || c >= cols {
                return Err(Error::InvalidSparse(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::InvalidSparse(format!("repeated entry ({r}, {c})")));
            }
            prev = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from raw CSR arrays, checking every layout invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(Error::InvalidSparse("row_offsets must have rows+1 entries starting at 0".into()));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::InvalidSparse("row_offsets must end at the number of stored values".into()));
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(Error::InvalidSparse(format!("row_offsets decrease at row {r}")));
            }
            let row = &col_indices[lo..hi];
            if row.iter().any(|&c| c >= cols) {
                return Err(Error::InvalidSparse(format!("column out of range in row {r}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSparse(format!("columns not strictly increasing in row {r}")));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values stored in row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at `(r, c)`, or zero.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        if r >= self.rows {
            return 0.0;
        }
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn is_stored(&self, r: usize, c: usize) -> bool {
        r < self.rows && self.row(r).0.binary_search(&c).is_ok()
    }

    /// Returns the first `(row, col)` where the structure or values differ
    /// from the transpose.
    pub fn first_asymmetry(&self) -> Option<(usize, usize)> {
        if self.rows != self.cols {
            return Some((self.rows, self.cols));
        }
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let (tcols, tvals) = self.row(c);
                match tcols.binary_search(&r) {
                    Ok(k) if tvals[k] == v => {}
                    _ => return Some((r, c)),
                }
            }
        }
        None
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// Sparse × dense product. Rows are independent, so large products are
    /// split across the rayon pool; each output row is summed in stored
    /// column order regardless of partitioning.
    pub fn spmm(&self, dense: ArrayView2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.cols {
            return Err(Error::shape(
                "spmm",
                format!("{} dense rows", self.cols),
                format!("{} dense rows", dense.nrows()),
            ));
        }
        let width = dense.ncols();
        let mut out = Array2::zeros((self.rows, width));
        let fill = |r: usize, mut out_row: ndarray::ArrayViewMut1<f64>| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out_row.scaled_add(v, &dense.row(c));
            }
        };
        if self.rows * width >= PARALLEL_SPMM_THRESHOLD {
            out.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(r, row)| fill(r, row));
        } else {
            for (r, row) in out.axis_iter_mut(Axis(0)).enumerate() {
                fill(r, row);
            }
        }
        Ok(out)
    }

    /// Sorted neighbors of `vertex`, excluding the vertex itself.
    pub fn neighbors_of(&self, vertex: usize) -> Result<Vec<usize>> {
        if vertex >= self.rows {
            return Err(Error::VertexOutOfRange {
                vertex,
                num_vertices: self.rows,
            });
        }
        Ok(self.row(vertex).0.iter().copied().filter(|&c| c != vertex).collect())
    }
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` together with the self-looped degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: SparseMatrix,
    degrees: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Row sums of `A + I`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn num_vertices(&self) -> usize {
        self.matrix.rows()
    }

    pub fn spmm(&self, dense: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.matrix.spmm(dense)
    }
}

/// Block matrix `[[0, B], [B', 0]]` over users then items.
pub fn build_bipartite_adjacency(interactions: &InteractionSet) -> SparseMatrix {
    let users = interactions.num_users();
    let n = interactions.num_vertices();
    let mut entries = Vec::with_capacity(2 * interactions.len());
    for &(u, i) in interactions.pairs() {
        entries.push((u, users + i, 1.0));
        entries.push((users + i, u, 1.0));
    }
    SparseMatrix::from_triplets(n, n, entries).expect("validated interaction set yields a valid block matrix")
}

pub fn normalize_adjacency(adjacency: &SparseMatrix) -> Result<NormalizedAdjacency> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::shape("normalize_adjacency", "square matrix", format!("{}x{}", n, adjacency.cols())));
    }
    if let Some((row, col)) = adjacency.first_asymmetry() {
        return Err(Error::Asymmetric { row, col });
    }
    for r in 0..n {
        if adjacency.is_stored(r, r) {
            return Err(Error::InvalidSparse(format!("nonzero diagonal at vertex {r}")));
        }
    }

    let degrees: Vec<f64> = (0..n).map(|r| 1.0 + adjacency.row(r).1.iter().sum::<f64>()).collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(adjacency.nnz() + n);
    let mut values = Vec::with_capacity(adjacency.nnz() + n);
    row_offsets.push(0);
    for r in 0..n {
        let (cols, vals) = adjacency.row(r);
        let mut self_done = false;
        for (&c, &v) in cols.iter().zip(vals) {
            if !self_done && c > r {
                col_indices.push(r);
                values.push(1.0 / degrees[r]);
                self_done = true;
            }
            col_indices.push(c);
            // the degree product commutes, so (r, c) and (c, r) agree bitwise
            values.push(v / (degrees[r] * degrees[c]).sqrt());
        }
        if !self_done {
            col_indices.push(r);
            values.push(1.0 / degrees[r]);
        }
        row_offsets.push(col_indices.len());
    }
    let matrix = SparseMatrix::from_csr(n, n, row_offsets, col_indices, values)?;
    Ok(NormalizedAdjacency { matrix, degrees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn smallest_bipartite_graph() {
        let set = InteractionSet::new(1, 1, vec![(0, 0)]).unwrap();
        let a = build_bipartite_adjacency(&set);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn empty_graph_has_no_entries() {
        let set = InteractionSet::new(2, 3, vec![]).unwrap();
        let a = build_bipartite_adjacency(&set);
        assert_eq!(a.nnz(), 0);
        assert_eq!(a.rows(), 5);
        assert!(a.to_dense().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_layout_two_by_two() {
        let set = InteractionSet::new(2, 2, vec![(0, 0), (1, 1)]).unwrap();
        let a = build_bipartite_adjacency(&set);
        let mut stored: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| a.row(r).0.iter().map(move |&c| (r, c)).collect::<Vec<_>>())
            .collect();
        stored.sort();
        assert_eq!(stored, vec![(0, 2), (1, 3), (2, 0), (3, 1)]);
    }

    #[test]
    fn out_of_range_pair_is_named() {
        let err = InteractionSet::new(1, 2, vec![(0, 0), (0, 5)]).unwrap_err();
        assert!(err.to_string().contains("item 5"), "{err}");
        assert!(matches!(InteractionSet::new(1, 1, vec![(0, 0), (0, 0)]), Err(Error::DuplicateInteraction { .. })));
    }

    #[test]
    fn normalize_single_edge() {
        let set = InteractionSet::new(1, 1, vec![(0, 0)]).unwrap();
        let norm = normalize_adjacency(&build_bipartite_adjacency(&set)).unwrap();
        assert_eq!(norm.matrix().to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn normalize_isolated_vertex() {
        let set = InteractionSet::new(1, 2, vec![(0, 0)]).unwrap();
        let norm = normalize_adjacency(&build_bipartite_adjacency(&set)).unwrap();
        let (cols, vals) = norm.matrix().row(2);
        assert_eq!(cols, &[2]);
        assert_eq!(vals, &[1.0]);
    }

    #[test]
    fn normalize_path_graph() {
        let set = InteractionSet::new(1, 2, vec![(0, 0), (0, 1)]).unwrap();
        let norm = normalize_adjacency(&build_bipartite_adjacency(&set)).unwrap();
        assert_eq!(norm.degrees(), &[3.0, 2.0, 2.0]);
        assert_abs_diff_eq!(norm.matrix().get(0, 1), 1.0 / 6f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(norm.matrix().get(0, 1), 0.4082, epsilon = 1e-4);
        assert_abs_diff_eq!(norm.matrix().get(0, 0), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_asymmetric() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert!(matches!(normalize_adjacency(&m), Err(Error::Asymmetric { row: 0, col: 1 })));
    }

    #[test]
    fn spmm_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(SparseMatrix::identity(3).spmm(x.view()).unwrap(), x);
        assert_eq!(SparseMatrix::zeros(3, 3).spmm(x.view()).unwrap(), Array2::<f64>::zeros((3, 2)));
        let half = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)]).unwrap();
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(half.spmm(eye.view()).unwrap(), array![[0.5, 0.5], [0.5, 0.5]]);
        assert!(matches!(half.spmm(x.view()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn neighbors() {
        let one = build_bipartite_adjacency(&InteractionSet::new(1, 1, vec![(0, 0)]).unwrap());
        assert_eq!(one.neighbors_of(0).unwrap(), vec![1]);
        let three = build_bipartite_adjacency(&InteractionSet::new(1, 3, vec![(0, 0), (0, 2)]).unwrap());
        assert_eq!(three.neighbors_of(0).unwrap(), vec![1, 3]);
        assert!(three.neighbors_of(2).unwrap().is_empty());
        assert!(matches!(three.neighbors_of(9), Err(Error::VertexOutOfRange { .. })));
        // self loops are excluded
        let norm = normalize_adjacency(&one).unwrap();
        assert_eq!(norm.matrix().neighbors_of(1).unwrap(), vec![0]);
    }

    #[test]
    fn csr_validation() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 1], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
    }
}
