//! Spatial kNN graph, mean-aggregation diffusion, spatial blocks and Moran's I.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Undirected binary kNN graph in compressed adjacency form.
///
/// `neighbors(i)` is sorted ascending and never contains `i`. The diffusion
/// operator is `D⁻¹A`; a node with no neighbours diffuses to itself
/// (identity row), which only arises after held-out edges are removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialGraph {
    n: usize,
    k: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    /// Original node id of each local node.
    node_ids: Vec<usize>,
}

impl SpatialGraph {
    /// Builds a graph from undirected edge lists; each list must already be symmetric.
    fn from_lists(k: usize, lists: Vec<Vec<usize>>, node_ids: Vec<usize>) -> Self {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            indices.extend(l);
            offsets.push(indices.len());
        }
        SpatialGraph {
            n,
            k,
            offsets,
            indices,
            node_ids,
        }
    }

    /// Graph with `n` isolated nodes: diffusion is the identity.
    pub fn edgeless(n: usize) -> Self {
        Self::from_lists(0, vec![Vec::new(); n], (0..n).collect())
    }

    /// Builds from an explicit undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Parameter(format!("edge ({a},{b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::Parameter(format!("self loop at node {a}")));
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        Ok(Self::from_lists(0, lists, (0..n).collect()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Sum of the binary weights, `Σᵢⱼ Aᵢⱼ`.
    pub fn total_weight(&self) -> usize {
        self.indices.len()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| {
                self.neighbors(i)
                    .iter()
                    .filter(move |&&j| j > i)
                    .map(move |&j| (i, j))
            })
            .collect()
    }

    /// Nonzero entries `(j, weight)` of row `i` of the diffusion operator.
    pub fn diffusion_row<T: Scalar>(&self, i: usize) -> Vec<(usize, T)> {
        let nb = self.neighbors(i);
        if nb.is_empty() {
            vec![(i, T::one())]
        } else {
            let w = T::one() / T::from_usize_lossy(nb.len());
            nb.iter().map(|&j| (j, w)).collect()
        }
    }

    pub fn adjacency_dense<T: Scalar>(&self) -> Array2<T> {
        let mut a = Array2::zeros((self.n, self.n));
        for (i, j) in self.edges() {
            a[[i, j]] = T::one();
            a[[j, i]] = T::one();
        }
        a
    }

    pub fn diffusion_dense<T: Scalar>(&self) -> Array2<T> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, w) in self.diffusion_row::<T>(i) {
                m[[i, j]] = w;
            }
        }
        m
    }

    fn check_rows<T>(&self, values: &ArrayView2<T>) -> Result<()> {
        if values.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, values have {} rows",
                self.n,
                values.nrows()
            )));
        }
        Ok(())
    }

    /// `Ã · values`: each output row is the mean of the neighbours' rows.
    pub fn diffuse<T: Scalar>(&self, values: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_rows(&values)?;
        let mut out = Array2::zeros(values.raw_dim());
        for i in 0..self.n {
            let nb = self.neighbors(i);
            let mut row = out.row_mut(i);
            if nb.is_empty() {
                row.assign(&values.row(i));
                continue;
            }
            for &j in nb {
                row += &values.row(j);
            }
            let inv = T::one() / T::from_usize_lossy(nb.len());
            row.mapv_inplace(|v| v * inv);
        }
        Ok(out)
    }

    /// `Ãᵀ · values`, the adjoint used when backpropagating through [`diffuse`](Self::diffuse).
    pub fn diffuse_transpose<T: Scalar>(&self, values: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_rows(&values)?;
        let mut out = Array2::zeros(values.raw_dim());
        for i in 0..self.n {
            let nb = self.neighbors(i);
            if nb.is_empty() {
                let mut row = out.row_mut(i);
                row += &values.row(i);
                continue;
            }
            let inv = T::one() / T::from_usize_lossy(nb.len());
            let scaled = values.row(i).mapv(|v| v * inv);
            for &j in nb {
                let mut row = out.row_mut(j);
                row += &scaled;
            }
        }
        Ok(out)
    }

    /// Applies [`diffuse`](Self::diffuse) `steps` times.
    pub fn diffuse_steps<T: Scalar>(&self, values: ArrayView2<T>, steps: usize) -> Result<Array2<T>> {
        let mut cur = values.to_owned();
        for _ in 0..steps {
            cur = self.diffuse(cur.view())?;
        }
        self.check_rows(&values)?;
        Ok(cur)
    }

    pub fn diffuse_transpose_steps<T: Scalar>(
        &self,
        values: ArrayView2<T>,
        steps: usize,
    ) -> Result<Array2<T>> {
        let mut cur = values.to_owned();
        for _ in 0..steps {
            cur = self.diffuse_transpose(cur.view())?;
        }
        self.check_rows(&values)?;
        Ok(cur)
    }

    /// Same node set with every edge touching a node in `test_ids` removed.
    /// Held-out nodes become isolated and diffuse to themselves.
    pub fn remove_incident_edges(&self, test_ids: &[usize]) -> Result<SpatialGraph> {
        let mask = self.mask(test_ids)?;
        let lists = (0..self.n)
            .map(|i| {
                if mask[i] {
                    Vec::new()
                } else {
                    self.neighbors(i).iter().copied().filter(|&j| !mask[j]).collect()
                }
            })
            .collect();
        Ok(Self::from_lists(self.k, lists, self.node_ids.clone()))
    }

    fn mask(&self, test_ids: &[usize]) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.n];
        for &t in test_ids {
            if t >= self.n {
                return Err(Error::Parameter(format!("test node {t} out of range")));
            }
            mask[t] = true;
        }
        Ok(mask)
    }

    pub fn write_edge_list<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j"])?;
        for (i, j) in self.edges() {
            w.write_record([self.node_ids[i].to_string(), self.node_ids[j].to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<edge list>", e))?;
        Ok(())
    }
}

/// Symmetric kNN graph on planar coordinates: `i ~ j` iff `j` is among the
/// `k` Euclidean-nearest nodes of `i` or vice versa. Distance ties are broken
/// toward the smaller node index.
pub fn build_knn_graph<T: Scalar>(coords: ArrayView2<T>, k: usize) -> Result<SpatialGraph> {
    let n = coords.nrows();
    if coords.ncols() != 2 {
        return Err(Error::Dimension(format!("coords have {} columns, expected 2", coords.ncols())));
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("coordinates".into()));
    }
    let directed = nearest_neighbors(coords, k, false);
    let mut lists = vec![Vec::with_capacity(2 * k); n];
    for (i, nb) in directed.iter().enumerate() {
        for &j in nb {
            lists[i].push(j);
            lists[j].push(i);
        }
    }
    let mut g = SpatialGraph::from_lists(k, lists, (0..n).collect());
    g.k = k;
    Ok(g)
}

/// The `k` Euclidean-nearest nodes of every node, nearest first, ties toward
/// the smaller index. With `include_self` the node itself counts as its own
/// nearest neighbour.
pub fn nearest_neighbors<T: Scalar>(
    coords: ArrayView2<T>,
    k: usize,
    include_self: bool,
) -> Vec<Vec<usize>> {
    let n = coords.nrows();
    let xs: Vec<f64> = coords.column(0).iter().map(|v| v.to_f64_lossy()).collect();
    let ys: Vec<f64> = coords.column(1).iter().map(|v| v.to_f64_lossy()).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| include_self || j != i)
                .map(|j| {
                    let dx = xs[i] - xs[j];
                    let dy = ys[i] - ys[j];
                    let d = if i == j { -1.0 } else { dx * dx + dy * dy };
                    (d, j)
                })
                .collect();
            let k = k.min(cand.len());
            if k == 0 {
                return Vec::new();
            }
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Induced graph on the nodes not in `test_ids`, with local indices in
/// ascending original order. Every edge touching a held-out node is dropped;
/// training nodes left without neighbours get identity diffusion rows.
pub fn training_subgraph(graph: &SpatialGraph, test_ids: &[usize]) -> Result<SpatialGraph> {
    let mask = graph.mask(test_ids)?;
    let keep: Vec<usize> = (0..graph.n).filter(|&i| !mask[i]).collect();
    if keep.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let mut local = vec![usize::MAX; graph.n];
    for (li, &gi) in keep.iter().enumerate() {
        local[gi] = li;
    }
    let lists = keep
        .iter()
        .map(|&gi| {
            graph
                .neighbors(gi)
                .iter()
                .filter(|&&j| !mask[j])
                .map(|&j| local[j])
                .collect()
        })
        .collect();
    let ids = keep.iter().map(|&gi| graph.node_ids[gi]).collect();
    Ok(SpatialGraph::from_lists(graph.k, lists, ids))
}

/// Global Moran's I with binary weights `wᵢⱼ = Aᵢⱼ`:
/// `I = (N/W) Σᵢⱼ wᵢⱼ (vᵢ − v̄)(vⱼ − v̄) / Σᵢ (vᵢ − v̄)²`.
pub fn morans_i<T: Scalar>(values: ArrayView1<T>, graph: &SpatialGraph) -> Result<T> {
    let n = values.len();
    if n != graph.n {
        return Err(Error::Dimension(format!("{n} values for a {}-node graph", graph.n)));
    }
    let w = graph.total_weight();
    if w == 0 {
        return Err(Error::DegenerateColumn("graph has no edges".into()));
    }
    let nf = T::from_usize_lossy(n);
    let mean = values.iter().copied().sum::<T>() / nf;
    let dev: Array1<T> = values.mapv(|v| v - mean);
    let denom: T = dev.iter().map(|d| *d * *d).sum();
    let scale = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if denom <= (T::epsilon() * scale).powi(2) * nf || denom == T::zero() {
        return Err(Error::DegenerateColumn("constant values".into()));
    }
    let mut num = T::zero();
    for i in 0..n {
        let s: T = graph.neighbors(i).iter().map(|&j| dev[j]).sum();
        num += dev[i] * s;
    }
    Ok(nf / T::from_usize_lossy(w) * num / denom)
}

/// Spatial blocks on a regular grid over the bounding box and their fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub grid: usize,
    pub folds: usize,
    pub block_id: Vec<usize>,
    pub fold_id: Vec<usize>,
    /// Fold of each block (`grid²` entries).
    pub block_fold: Vec<usize>,
    /// Seed actually used after any retries.
    pub seed_used: u64,
}

impl BlockPartition {
    pub fn fold_members(&self, fold: usize) -> Vec<usize> {
        members(&self.fold_id, fold)
    }
}

pub(crate) fn members(fold_id: &[usize], fold: usize) -> Vec<usize> {
    fold_id
        .iter()
        .enumerate()
        .filter(|(_, &f)| f == fold)
        .map(|(i, _)| i)
        .collect()
}

const MAX_FOLD_RETRIES: u64 = 10;

/// Equal-width `grid × grid` blocks; intervals are half-open except the last,
/// so boundary points go to the higher block. Blocks are shuffled by `seed`
/// and dealt round-robin to `folds` folds; if a fold comes out empty the
/// shuffle is retried with `seed + 1`, `seed + 2`, … up to ten times.
pub fn block_partition<T: Scalar>(
    coords: ArrayView2<T>,
    grid: usize,
    folds: usize,
    seed: u64,
) -> Result<BlockPartition> {
    if grid == 0 || folds == 0 {
        return Err(Error::Parameter("grid and folds must be positive".into()));
    }
    if folds > grid * grid {
        return Err(Error::Parameter(format!("{folds} folds from {} blocks", grid * grid)));
    }
    let block_id = grid_blocks(coords, grid)?;
    let n_blocks = grid * grid;
    let mut occupied = vec![false; n_blocks];
    for &b in &block_id {
        occupied[b] = true;
    }
    for attempt in 0..=MAX_FOLD_RETRIES {
        let s = seed.wrapping_add(attempt);
        let mut order: Vec<usize> = (0..n_blocks).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        let mut block_fold = vec![0; n_blocks];
        for (pos, &b) in order.iter().enumerate() {
            block_fold[b] = pos % folds;
        }
        let mut used = vec![false; folds];
        for b in 0..n_blocks {
            if occupied[b] {
                used[block_fold[b]] = true;
            }
        }
        if used.iter().all(|&u| u) {
            let fold_id = block_id.iter().map(|&b| block_fold[b]).collect();
            return Ok(BlockPartition {
                grid,
                folds,
                block_id,
                fold_id,
                block_fold,
                seed_used: s,
            });
        }
    }
    Err(Error::EmptyFold {
        folds,
        attempts: MAX_FOLD_RETRIES as usize + 1,
    })
}

fn grid_blocks<T: Scalar>(coords: ArrayView2<T>, grid: usize) -> Result<Vec<usize>> {
    if coords.ncols() != 2 {
        return Err(Error::Dimension("coords must have 2 columns".into()));
    }
    let axis = |c: usize| -> Vec<usize> {
        let col: Vec<f64> = coords.column(c).iter().map(|v| v.to_f64_lossy()).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / grid as f64;
        col.iter()
            .map(|&v| {
                if width <= 0.0 {
                    0
                } else {
                    (((v - lo) / width).floor() as usize).min(grid - 1)
                }
            })
            .collect()
    };
    let bx = axis(0);
    let by = axis(1);
    Ok(bx.iter().zip(&by).map(|(&x, &y)| y * grid + x).collect())
}

/// Seeded random assignment of `n` nodes to `folds` folds of near-equal size.
pub fn random_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_id = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_id[i] = pos % folds;
    }
    fold_id
}

/// Node sets as ordered sets, for audits.
pub fn edge_endpoints(graph: &SpatialGraph) -> BTreeSet<usize> {
    graph
        .edges()
        .into_iter()
        .flat_map(|(i, j)| [graph.node_ids[i], graph.node_ids[j]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn path3() -> SpatialGraph {
        build_knn_graph(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]].view(), 1).unwrap()
    }

    fn random_coords(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| rng.gen::<f64>())
    }

    #[test]
    fn collinear_points_form_a_path() {
        let g = path3();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn k_must_be_below_n() {
        let c = array![[0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(build_knn_graph(c.view(), 2), Err(Error::Parameter(_))));
        assert!(build_knn_graph(c.view(), 0).is_err());
    }

    #[test]
    fn ties_go_to_smaller_index() {
        // Node 0 at the centre, four equidistant nodes.
        let c = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let g = build_knn_graph(c.view(), 2).unwrap();
        // 0 -> {1,2}; 1 -> {0,2}; 2 -> {0,1}; 3 -> {0,2}; 4 -> {0,1}.
        assert_eq!(
            g.edges(),
            vec![(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 4), (2, 3)]
        );
    }

    #[test]
    fn adjacency_is_symmetric_without_self_loops() {
        let g = build_knn_graph(random_coords(60, 3).view(), 5).unwrap();
        let a: Array2<f64> = g.adjacency_dense();
        assert_eq!(a, a.t());
        for i in 0..g.n() {
            assert_eq!(a[[i, i]], 0.0);
            assert!(g.degree(i) >= 5);
        }
    }

    #[test]
    fn diffusion_preserves_constants_and_spreads_one_hot() {
        let g = build_knn_graph(random_coords(30, 4).view(), 4).unwrap();
        let c = Array2::from_elem((30, 2), 3.5);
        let d = g.diffuse(c.view()).unwrap();
        for v in d.iter() {
            assert_abs_diff_eq!(*v, 3.5, epsilon = 1e-12);
        }
        let i = 7;
        let mut e = Array2::<f64>::zeros((30, 1));
        e[[i, 0]] = 1.0;
        let d = g.diffuse(e.view()).unwrap();
        for j in 0..30 {
            let want = if g.has_edge(j, i) { 1.0 / g.degree(j) as f64 } else { 0.0 };
            assert_abs_diff_eq!(d[[j, 0]], want, epsilon = 1e-15);
        }
        assert!(g.diffuse(Array2::<f64>::zeros((29, 1)).view()).is_err());
    }

    #[test]
    fn diffusion_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = build_knn_graph(random_coords(10, 11).view(), 3).unwrap();
        let v = Array2::from_shape_fn((10, 3), |_| rng.gen::<f64>() - 0.5);
        let dense: Array2<f64> = g.diffusion_dense();
        let want = dense.dot(&v);
        let got = g.diffuse(v.view()).unwrap();
        let want_t = dense.t().dot(&v);
        let got_t = g.diffuse_transpose(v.view()).unwrap();
        for (a, b) in got.iter().zip(want.iter()).chain(got_t.iter().zip(want_t.iter())) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn morans_i_on_path_graph() {
        // values 0,1,2: mean 1, deviations -1,0,1; W = 4;
        // Σ wᵢⱼ dᵢdⱼ = 2·(d0 d1 + d1 d2) = 0, so I = 0.
        let g = path3();
        let i = morans_i(array![0.0, 1.0, 2.0].view(), &g).unwrap();
        assert_abs_diff_eq!(i, 0.0, epsilon = 1e-15);
        // values 0,0,3: mean 1, devs -1,-1,2; pairs: 2·((-1)(-1) + (-1)(2)) = -2;
        // denom = 6; I = (3/4)(-2/6) = -0.25.
        let i = morans_i(array![0.0, 0.0, 3.0].view(), &g).unwrap();
        assert_abs_diff_eq!(i, -0.25, epsilon = 1e-15);
        assert!(matches!(
            morans_i(array![1.0, 1.0, 1.0].view(), &g),
            Err(Error::DegenerateColumn(_))
        ));
    }

    #[test]
    fn morans_i_high_for_smooth_lattice_field() {
        let side = 10;
        let coords = Array2::from_shape_fn((side * side, 2), |(i, c)| {
            if c == 0 {
                (i % side) as f64
            } else {
                (i / side) as f64
            }
        });
        let g = build_knn_graph(coords.view(), 8).unwrap();
        let v = coords.column(0).to_owned();
        assert!(morans_i(v.view(), &g).unwrap() > 0.9);
    }

    #[test]
    fn block_partition_boundaries_and_determinism() {
        // 10x10 lattice on [0, 9]: block width 1.8.
        let coords = Array2::from_shape_fn((100, 2), |(i, c)| {
            if c == 0 {
                (i % 10) as f64
            } else {
                (i / 10) as f64
            }
        });
        let p = block_partition(coords.view(), 5, 5, 42).unwrap();
        let q = block_partition(coords.view(), 5, 5, 42).unwrap();
        assert_eq!(p, q);
        for f in 0..5 {
            assert_eq!(p.block_fold.iter().filter(|&&b| b == f).count(), 5);
            assert!(!p.fold_members(f).is_empty());
        }
        let mut seen = vec![false; 25];
        for &b in &p.block_id {
            seen[b] = true;
        }
        assert!(seen.iter().all(|&s| s));
        // x = 3.6 = 2 × 1.8 is an interior boundary: higher block; x = 9 is the closed end.
        let c = array![[0.0, 0.0], [3.6, 0.0], [9.0, 9.0]];
        let b = grid_blocks(c.view(), 5).unwrap();
        assert_eq!(b, vec![0, 2, 24]);
    }

    #[test]
    fn empty_fold_is_retried_then_fails() {
        // Two points: only two blocks occupied, five folds can never all be filled.
        let c = array![[0.0, 0.0], [1.0, 1.0]];
        assert!(matches!(
            block_partition(c.view(), 5, 5, 0),
            Err(Error::EmptyFold { .. })
        ));
    }

    #[test]
    fn training_subgraph_of_path() {
        let g = path3();
        let sub = training_subgraph(&g, &[1]).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.node_ids(), &[0, 2]);
        assert!(sub.edges().is_empty());
        let d: Array2<f64> = sub.diffusion_dense();
        assert_eq!(d, Array2::<f64>::eye(2));
        assert_eq!(training_subgraph(&g, &[]).unwrap(), g);
        assert!(matches!(training_subgraph(&g, &[0, 1, 2]), Err(Error::EmptyTraining)));
        let iso = g.remove_incident_edges(&[1]).unwrap();
        assert_eq!(iso.n(), 3);
        assert!(iso.edges().is_empty());
    }

    #[test]
    fn edge_list_export() {
        let mut buf = Vec::new();
        path3().write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j\n0,1\n1,2\n");
    }

    #[test]
    fn random_folds_partition_nodes() {
        let f = random_folds(23, 5, 9);
        assert_eq!(f, random_folds(23, 5, 9));
        for k in 0..5 {
            let c = f.iter().filter(|&&x| x == k).count();
            assert!(c == 4 || c == 5);
        }
    }
}
