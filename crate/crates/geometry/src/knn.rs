//! Exact k-nearest-neighbor search over row vectors.
//!
//! Results are ordered by `(squared distance, index)`, so ties resolve to the
//! lower index and every backend returns identical lists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{GeometryError, Result};

const LEAF_SIZE: usize = 16;

/// Squared Euclidean distance with eight interleaved accumulators combined
/// pairwise. Every search path and the brute-force reference use this, so
/// distances are bitwise comparable.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    dist: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct KdTree {
    nodes: Vec<Node>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
}

#[derive(Clone, Debug)]
enum Backend {
    KdTree(KdTree),
    Flat,
}

/// Search structure over `n` row vectors of dimension `dim`.
#[derive(Clone, Debug)]
pub struct KnnIndex {
    data: Vec<f64>,
    dim: usize,
    n: usize,
    backend: Backend,
}

impl KnnIndex {
    fn checked(data: &[f64], dim: usize) -> Result<usize> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(GeometryError::Contract(format!(
                "{} values cannot be split into rows of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Data("kNN input contains non-finite values".into()));
        }
        Ok(data.len() / dim)
    }

    /// Brute-force index; the right choice for high-dimensional feature space.
    pub fn flat(data: &[f64], dim: usize) -> Result<Self> {
        let n = Self::checked(data, dim)?;
        Ok(KnnIndex {
            data: data.to_vec(),
            dim,
            n,
            backend: Backend::Flat,
        })
    }

    /// kd-tree index, split at the median of the widest dimension.
    pub fn kd_tree(data: &[f64], dim: usize) -> Result<Self> {
        let n = Self::checked(data, dim)?;
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        build_node(data, dim, &mut order, 0, n, &mut nodes);
        Ok(KnnIndex {
            data: data.to_vec(),
            dim,
            n,
            backend: Backend::KdTree(KdTree { nodes, order }),
        })
    }

    /// kd-tree for dimensions up to 8, flat scan above.
    pub fn auto(data: &[f64], dim: usize) -> Result<Self> {
        if dim <= 8 {
            Self::kd_tree(data, dim)
        } else {
            Self::flat(data, dim)
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Neighbors of every indexed point, `n×k` row-major. With `exclude_self`
    /// a point never lists its own index (duplicates at distance zero still
    /// count).
    pub fn knn_self(&self, k: usize, exclude_self: bool) -> Result<Vec<u32>> {
        let available = if exclude_self { self.n.saturating_sub(1) } else { self.n };
        if k == 0 || k > available {
            return Err(GeometryError::Contract(format!(
                "asked for {k} neighbors but only {available} candidates exist"
            )));
        }
        let rows: Vec<Vec<u32>> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let skip = exclude_self.then_some(i as u32);
                self.query(self.row(i), k, skip)
            })
            .collect();
        Ok(rows.concat())
    }

    /// Neighbors of arbitrary query rows, `m×k` row-major.
    pub fn knn(&self, queries: &[f64], k: usize) -> Result<Vec<u32>> {
        if queries.len() % self.dim != 0 {
            return Err(GeometryError::Contract(format!(
                "query rows must have dimension {}",
                self.dim
            )));
        }
        if k == 0 || k > self.n {
            return Err(GeometryError::Contract(format!(
                "asked for {k} neighbors but only {} candidates exist",
                self.n
            )));
        }
        let rows: Vec<Vec<u32>> = queries
            .par_chunks(self.dim)
            .map(|q| self.query(q, k, None))
            .collect();
        Ok(rows.concat())
    }

    fn query(&self, q: &[f64], k: usize, skip: Option<u32>) -> Vec<u32> {
        match &self.backend {
            Backend::Flat => {
                let mut all: Vec<Candidate> = (0..self.n as u32)
                    .filter(|&j| Some(j) != skip)
                    .map(|j| Candidate {
                        dist: squared_distance(q, self.row(j as usize)),
                        index: j,
                    })
                    .collect();
                if k < all.len() {
                    all.select_nth_unstable(k - 1);
                    all.truncate(k);
                }
                all.sort_unstable();
                all.into_iter().map(|c| c.index).collect()
            }
            Backend::KdTree(tree) => {
                let mut heap = BinaryHeap::with_capacity(k + 1);
                self.search(tree, 0, q, k, skip, &mut heap);
                heap.into_sorted_vec().into_iter().map(|c| c.index).collect()
            }
        }
    }

    fn search(
        &self,
        tree: &KdTree,
        node: usize,
        q: &[f64],
        k: usize,
        skip: Option<u32>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &tree.order[start..end] {
                    if Some(j) == skip {
                        continue;
                    }
                    let c = Candidate {
                        dist: squared_distance(q, self.row(j as usize)),
                        index: j,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(tree, near, q, k, skip, heap);
                // `<=` keeps equal-distance candidates with lower indices reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist {
                    self.search(tree, far, q, k, skip, heap);
                }
            }
        }
    }
}

fn build_node(
    data: &[f64],
    dim: usize,
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut best_dim = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for d in 0..dim {
        let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = data[i as usize * dim + d];
            (lo.min(v), hi.max(v))
        });
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = d;
        }
    }
    if best_spread <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    let key = |i: &u32| data[*i as usize * dim + best_dim];
    slice.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
    let value = key(&slice[mid]);
    // Left holds values <= split, right holds values >= split.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(data, dim, order, start, start + mid, nodes);
    let right = build_node(data, dim, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        dim: best_dim,
        value,
        left,
        right,
    };
    id
}

/// Reference search: full sort by `(distance, index)`.
pub fn brute_force_knn(data: &[f64], dim: usize, queries: &[f64], k: usize, skip_self: bool) -> Vec<u32> {
    let n = data.len() / dim;
    queries
        .chunks(dim)
        .enumerate()
        .flat_map(|(qi, q)| {
            let mut all: Vec<(f64, u32)> = (0..n)
                .filter(|&j| !(skip_self && j == qi))
                .map(|j| (squared_distance(q, &data[j * dim..(j + 1) * dim]), j as u32))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j)
        })
        .collect()
}
