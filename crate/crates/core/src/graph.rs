//! Bipartite user–item interaction graph in CSR form, plus its symmetrically
//! normalized adjacency.
//!
//! Users occupy node ids `[0, num_users)` and items occupy
//! `[num_users, num_users + num_items)`. Both edge directions are stored, and
//! every neighbor list is sorted ascending without duplicates, so two graphs
//! built from the same set of interactions are identical regardless of input
//! order.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// Dense node index over the joint user/item id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    row_offsets: Vec<usize>,
    neighbor_ids: Vec<u32>,
    degrees: Vec<u32>,
}

impl InteractionGraph {
    /// Builds the graph from `(user, item)` index pairs. Duplicate pairs
    /// collapse into one edge.
    pub fn build(
        interactions: &[(usize, usize)],
        num_users: usize,
        num_items: usize,
    ) -> Result<Self> {
        let num_nodes = num_users + num_items;
        if num_nodes > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{num_nodes} nodes exceed the u32 id space"
            )));
        }
        for &(user, item) in interactions {
            if user >= num_users || item >= num_items {
                return Err(Error::IdOutOfRange {
                    user,
                    item,
                    num_users,
                    num_items,
                });
            }
        }

        // Counting pass with duplicates, then per-row sort + dedup and compaction.
        let mut counts = vec![0usize; num_nodes + 1];
        for &(user, item) in interactions {
            counts[user + 1] += 1;
            counts[num_users + item + 1] += 1;
        }
        for v in 0..num_nodes {
            counts[v + 1] += counts[v];
        }
        let mut cursor = counts.clone();
        let mut raw = vec![0u32; counts[num_nodes]];
        for &(user, item) in interactions {
            let item_node = num_users + item;
            raw[cursor[user]] = item_node as u32;
            cursor[user] += 1;
            raw[cursor[item_node]] = user as u32;
            cursor[item_node] += 1;
        }

        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbor_ids = Vec::with_capacity(raw.len());
        let mut degrees = Vec::with_capacity(num_nodes);
        row_offsets.push(0);
        for v in 0..num_nodes {
            let row = &mut raw[counts[v]..counts[v + 1]];
            row.sort_unstable();
            let before = neighbor_ids.len();
            let mut last = None;
            for &n in row.iter() {
                if last != Some(n) {
                    neighbor_ids.push(n);
                    last = Some(n);
                }
            }
            degrees.push((neighbor_ids.len() - before) as u32);
            row_offsets.push(neighbor_ids.len());
        }

        Ok(Self {
            num_users,
            num_items,
            row_offsets,
            neighbor_ids,
            degrees,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    /// Number of undirected user–item edges.
    pub fn num_edges(&self) -> usize {
        self.neighbor_ids.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn neighbor_ids(&self) -> &[u32] {
        &self.neighbor_ids
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node] as usize
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbor_ids[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    #[inline]
    pub fn is_user(&self, node: usize) -> bool {
        node < self.num_users
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    pub fn user_node(&self, user: usize) -> NodeId {
        NodeId(user as u32)
    }

    pub fn item_node(&self, item: usize) -> NodeId {
        NodeId((self.num_users + item) as u32)
    }

    /// Node range on the other side of the bipartition from `node`.
    pub fn opposite_side(&self, node: usize) -> std::ops::Range<usize> {
        if self.is_user(node) {
            self.num_users..self.num_nodes()
        } else {
            0..self.num_users
        }
    }

    /// Items (as item indices, not node ids) the user interacted with.
    pub fn user_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        let offset = self.num_users;
        self.neighbors(user).iter().map(move |&n| n as usize - offset)
    }

    /// Undirected edges as `(user, item)` index pairs in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users).flat_map(move |u| self.user_items(u).map(move |i| (u, i)))
    }

    /// Symmetric normalization `D^{-1/2} A D^{-1/2}`.
    pub fn normalize(&self) -> NormalizedAdjacency {
        let inv_sqrt: Vec<f64> = self
            .degrees
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
            .collect();
        let values = (0..self.num_nodes())
            .flat_map(|v| {
                let inv_sqrt = &inv_sqrt;
                self.neighbors(v)
                    .iter()
                    .map(move |&n| inv_sqrt[v] * inv_sqrt[n as usize])
            })
            .collect();
        NormalizedAdjacency::from_parts(
            self.row_offsets.clone(),
            self.neighbor_ids.clone(),
            values,
            self.degrees.clone(),
            true,
        )
    }
}

static NEXT_SNAPSHOT: AtomicU64 = AtomicU64::new(1);

/// Weighted propagation matrix in CSR form.
///
/// Starts life as `D^{-1/2} A D^{-1/2}`; robust reweighting and edge addition
/// produce further instances that are no longer symmetric. Each instance
/// carries the *original* graph degrees, which every normalization downstream
/// keeps using, and a snapshot id so a backward pass can verify it runs
/// against the same matrix as the forward pass.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
    degrees: Vec<u32>,
    symmetric: bool,
    snapshot: u64,
}

impl PartialEq for NormalizedAdjacency {
    fn eq(&self, other: &Self) -> bool {
        self.row_offsets == other.row_offsets
            && self.cols == other.cols
            && self.values == other.values
            && self.degrees == other.degrees
    }
}

impl NormalizedAdjacency {
    pub(crate) fn from_parts(
        row_offsets: Vec<usize>,
        cols: Vec<u32>,
        values: Vec<f64>,
        degrees: Vec<u32>,
        symmetric: bool,
    ) -> Self {
        debug_assert_eq!(row_offsets.len(), degrees.len() + 1);
        debug_assert_eq!(cols.len(), values.len());
        Self {
            row_offsets,
            cols,
            values,
            degrees,
            symmetric,
            snapshot: NEXT_SNAPSHOT.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Rebuilds a matrix from raw CSR arrays, e.g. when loading a checkpoint.
    pub fn from_csr(
        row_offsets: Vec<usize>,
        cols: Vec<u32>,
        values: Vec<f64>,
        degrees: Vec<u32>,
    ) -> Result<Self> {
        let n = degrees.len();
        if row_offsets.len() != n + 1
            || row_offsets[0] != 0
            || *row_offsets.last().unwrap() != cols.len()
            || cols.len() != values.len()
            || row_offsets.windows(2).any(|w| w[0] > w[1])
            || cols.iter().any(|&c| c as usize >= n)
        {
            return Err(Error::Shape("inconsistent CSR arrays".into()));
        }
        let mut adj = Self::from_parts(row_offsets, cols, values, degrees, false);
        adj.symmetric = adj.is_numerically_symmetric();
        Ok(adj)
    }

    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// True when the matrix is known to equal its transpose.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn snapshot(&self) -> u64 {
        self.snapshot
    }

    #[inline]
    pub fn row(&self, node: usize) -> (&[u32], &[f64]) {
        let range = self.row_offsets[node]..self.row_offsets[node + 1];
        (&self.cols[range.clone()], &self.values[range])
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let (cols, values) = self.row(row);
        cols.binary_search(&(col as u32)).ok().map(|k| values[k])
    }

    /// Neighbor distribution realized by row `node`: `p(v) = a_uv·√d_v/√d_u`.
    ///
    /// For the plain normalized adjacency this is uniform over the neighbors;
    /// for reweighted or overlaid rows it is the distribution they encode.
    pub fn row_distribution(&self, node: usize) -> Vec<f64> {
        let du = (self.degrees[node] as f64).sqrt();
        let (cols, values) = self.row(node);
        cols.iter()
            .zip(values)
            .map(|(&c, &a)| a * (self.degrees[c as usize] as f64).sqrt() / du)
            .collect()
    }

    /// Materialized transpose, itself in CSR form with sorted rows.
    pub fn transpose(&self) -> Self {
        if self.symmetric {
            return self.clone();
        }
        let n = self.num_nodes();
        let mut counts = vec![0usize; n + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for v in 0..n {
            counts[v + 1] += counts[v];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Rows are visited in ascending order, so each transposed row fills sorted.
        for r in 0..n {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                let slot = cursor[c as usize];
                cols[slot] = r as u32;
                values[slot] = v;
                cursor[c as usize] += 1;
            }
        }
        Self::from_parts(counts, cols, values, self.degrees.clone(), false)
    }

    fn is_numerically_symmetric(&self) -> bool {
        (0..self.num_nodes()).all(|r| {
            let (cols, values) = self.row(r);
            cols.iter()
                .zip(values)
                .all(|(&c, &v)| self.value(c as usize, r) == Some(v))
        })
    }

    /// `out = self · x`, row by row.
    pub fn apply_into(&self, x: &EmbeddingTable, out: &mut EmbeddingTable) -> Result<()> {
        let n = self.num_nodes();
        if x.rows() != n || out.rows() != n || x.dim() != out.dim() {
            return Err(Error::Shape(format!(
                "adjacency over {n} nodes applied to {}x{} into {}x{}",
                x.rows(),
                x.dim(),
                out.rows(),
                out.dim()
            )));
        }
        for r in 0..n {
            let (cols, values) = self.row(r);
            let acc = out.row_mut(r);
            acc.fill(0.0);
            for (&c, &w) in cols.iter().zip(values) {
                for (a, &xv) in acc.iter_mut().zip(x.row(c as usize)) {
                    *a += w * xv;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &EmbeddingTable) -> Result<EmbeddingTable> {
        let mut out = EmbeddingTable::zeros(x.rows(), x.dim());
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Dense row-major copy, for small reference computations.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_nodes();
        let mut dense = vec![vec![0.0; n]; n];
        for (r, row) in dense.iter_mut().enumerate() {
            let (cols, values) = self.row(r);
            for (&c, &v) in cols.iter().zip(values) {
                row[c as usize] = v;
            }
        }
        dense
    }
}
