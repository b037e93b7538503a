//! Reverse-mode differentiation tape.
//!
//! Operations append nodes in execution order, so the node list is already a
//! topological order. `backward` replays the recorded rules from the loss
//! node towards the leaves.

use std::sync::Arc;

use crate::edgeconv::{self, EdgeConvSaved};
use crate::error::{NumError, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fixed-width neighbor lists: row `i` holds the `k` neighbor indices of point `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    idx: Vec<u32>,
}

impl NeighborTable {
    pub fn new(n: usize, k: usize, idx: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(NumError::Contract("neighbor count must be at least 1".into()));
        }
        if idx.len() != n * k {
            return Err(NumError::Dimension(format!(
                "neighbor table {n}x{k} needs {} indices, got {}",
                n * k,
                idx.len()
            )));
        }
        if let Some(bad) = idx.iter().find(|&&j| j as usize >= n) {
            return Err(NumError::Contract(format!(
                "neighbor index {bad} out of range for {n} points"
            )));
        }
        Ok(NeighborTable { n, k, idx })
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    pub fn indices(&self) -> &[u32] {
        &self.idx
    }
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        BatchNormStats {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds batch statistics into the running estimates. `var` is the
    /// population variance over `count` rows; the running variance stores the
    /// unbiased estimate.
    pub(crate) fn update(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let m = self.momentum;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for f in 0..mean.len() {
            self.running_mean[f] = (1.0 - m) * self.running_mean[f] + m * mean[f];
            self.running_var[f] = (1.0 - m) * self.running_var[f] + m * var[f] * unbias;
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    SoftmaxPoints {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Concat {
        parts: Vec<Var>,
    },
    EdgeFeatures {
        x: Var,
        nbrs: Arc<NeighborTable>,
    },
    Reshape {
        x: Var,
    },
    MatmulTn {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Square {
        x: Var,
    },
    Sum {
        x: Var,
    },
    EdgeConv(Box<EdgeConvSaved>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    ops_visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::from_op(self.shapes[v.0].clone(), g.to_vec()),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    /// Number of recorded operations whose backward rule ran.
    pub fn ops_visited(&self) -> usize {
        self.ops_visited
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf nodes.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · weight + bias` for `x: N×Fin`, `weight: Fin×Fout`, `bias: Fout`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, fin) = self.value(x).expect_rank2("linear input")?;
        let (win, fout) = self.value(weight).expect_rank2("linear weight")?;
        if fin != win {
            return Err(NumError::Dimension(format!(
                "linear: input has {fin} features but weight expects {win}"
            )));
        }
        let mut out = kernels::matmul(self.value(x).data(), n, fin, self.value(weight).data(), fout);
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.len() != fout {
                return Err(NumError::Dimension(format!(
                    "linear: bias has {} entries, expected {fout}",
                    bv.len()
                )));
            }
            for row in out.chunks_exact_mut(fout) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::from_op(vec![n, fout], out),
            &inputs,
            Op::Linear { x, w: weight, b: bias },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(NumError::Contract(format!(
                "leaky slope must lie in (0,1), got {slope}"
            )));
        }
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_op(shape, data), &[x], Op::LeakyRelu { x, slope }))
    }

    /// Batch normalization of each column over the row axis.
    pub fn batch_norm_points(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
    ) -> Result<Var> {
        let (n, f) = self.value(x).expect_rank2("batch norm input")?;
        if self.value(gamma).len() != f || self.value(beta).len() != f || stats.features() != f {
            return Err(NumError::Dimension(format!(
                "batch norm over {f} features got gamma {}, beta {}, stats {}",
                self.value(gamma).len(),
                self.value(beta).len(),
                stats.features()
            )));
        }
        let xd = self.value(x).data();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NumError::DegenerateBatch(n));
                }
                let mut mean = vec![0.0; f];
                for row in xd.chunks_exact(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for row in xd.chunks_exact(f) {
                    for c in 0..f {
                        let d = row[c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Eval => (stats.running_mean.clone(), stats.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for c in 0..f {
                let h = (xd[i * f + c] - mean[c]) * inv_std[c];
                xhat[i * f + c] = h;
                out[i * f + c] = g[c] * h + b[c];
            }
        }
        if mode == Mode::Train {
            stats.update(&mean, &var, n);
        }
        Ok(self.push(
            Tensor::from_op(vec![n, f], out),
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    /// Softmax down each column of an `N×J` matrix.
    pub fn softmax_over_points(&mut self, logits: Var) -> Result<Var> {
        let (n, j) = self.value(logits).expect_rank2("softmax input")?;
        let xd = self.value(logits).data();
        if xd.iter().any(|v| !v.is_finite()) {
            return Err(NumError::Numeric("softmax logits must be finite".into()));
        }
        let mut max = vec![f64::NEG_INFINITY; j];
        for row in xd.chunks_exact(j) {
            for (m, v) in max.iter_mut().zip(row) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        let mut out: Vec<f64> = Vec::with_capacity(n * j);
        let mut sum = vec![0.0; j];
        for row in xd.chunks_exact(j) {
            for c in 0..j {
                let e = (row[c] - max[c]).exp();
                sum[c] += e;
                out.push(e);
            }
        }
        for row in out.chunks_exact_mut(j) {
            for c in 0..j {
                row[c] /= sum[c];
            }
        }
        Ok(self.push(
            Tensor::from_op(vec![n, j], out),
            &[logits],
            Op::SoftmaxPoints { x: logits },
        ))
    }

    /// Max over the neighbor axis of an `N×k×F` tensor. Ties resolve to the
    /// lowest neighbor slot.
    pub fn neighbor_max_pool(&mut self, edge_feats: Var) -> Result<Var> {
        let shape = self.value(edge_feats).shape().to_vec();
        if shape.len() != 3 {
            return Err(NumError::Dimension(format!(
                "max pool expects N×k×F, got {shape:?}"
            )));
        }
        let (n, k, f) = (shape[0], shape[1], shape[2]);
        let xd = self.value(edge_feats).data();
        let mut out = vec![0.0; n * f];
        let mut argmax = vec![0u32; n * f];
        for i in 0..n {
            let o = &mut out[i * f..(i + 1) * f];
            let a = &mut argmax[i * f..(i + 1) * f];
            o.copy_from_slice(&xd[i * k * f..i * k * f + f]);
            for jj in 1..k {
                let src = &xd[(i * k + jj) * f..(i * k + jj + 1) * f];
                for c in 0..f {
                    if src[c] > o[c] {
                        o[c] = src[c];
                        a[c] = jj as u32;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_op(vec![n, f], out),
            &[edge_feats],
            Op::MaxPool {
                x: edge_feats,
                argmax,
            },
        ))
    }

    /// Column-wise concatenation of `N×F_i` blocks, in order.
    pub fn concat_features(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NumError::Contract("concat needs at least one part".into()));
        }
        let mut widths = Vec::with_capacity(parts.len());
        let n = self.value(parts[0]).expect_rank2("concat part")?.0;
        for &p in parts {
            let (r, c) = self.value(p).expect_rank2("concat part")?;
            if r != n {
                return Err(NumError::Dimension(format!(
                    "concat: row counts differ ({n} vs {r})"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::from_op(vec![n, total], out),
            parts,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Edge features `(x_i, x_j − x_i)` for every neighbor `j` of every point `i`,
    /// shaped `N×k×2F`.
    pub fn edge_features(&mut self, x: Var, nbrs: Arc<NeighborTable>) -> Result<Var> {
        let (n, f) = self.value(x).expect_rank2("edge feature input")?;
        if nbrs.points() != n {
            return Err(NumError::Dimension(format!(
                "neighbor table covers {} points, features have {n}",
                nbrs.points()
            )));
        }
        let k = nbrs.k();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * k * 2 * f);
        for i in 0..n {
            let xi = &xd[i * f..(i + 1) * f];
            for &j in nbrs.row(i) {
                let xj = &xd[j as usize * f..(j as usize + 1) * f];
                out.extend_from_slice(xi);
                out.extend(xj.iter().zip(xi).map(|(a, b)| a - b));
            }
        }
        Ok(self.push(
            Tensor::from_op(vec![n, k, 2 * f], out),
            &[x],
            Op::EdgeFeatures { x, nbrs },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, &[x], Op::Reshape { x }))
    }

    /// `aᵀ · b` for `a: N×J`, `b: N×C`, giving `J×C`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, j) = self.value(a).expect_rank2("matmul_tn lhs")?;
        let (nb, c) = self.value(b).expect_rank2("matmul_tn rhs")?;
        if n != nb {
            return Err(NumError::Dimension(format!(
                "matmul_tn: {n} rows against {nb}"
            )));
        }
        let out = kernels::matmul_at(self.value(a).data(), n, j, self.value(b).data(), c);
        Ok(self.push(
            Tensor::from_op(vec![j, c], out),
            &[a, b],
            Op::MatmulTn { a, b },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_op(shape, data), &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * v).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_op(shape, data), &[x], Op::Square { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::from_op(vec![1], vec![s]), &[x], Op::Sum { x })
    }

    /// Fused EdgeConv block: edge features, bias-free linear map, batch
    /// normalization over all `N·k` edges, leaky ReLU and max pooling over
    /// neighbors. Equivalent to chaining [`Tape::edge_features`],
    /// [`Tape::linear`], [`Tape::batch_norm_points`], [`Tape::leaky_relu`] and
    /// [`Tape::neighbor_max_pool`], but never materializes the `N×k×F` edge
    /// tensors.
    #[allow(clippy::too_many_arguments)]
    pub fn edge_conv(
        &mut self,
        x: Var,
        nbrs: Arc<NeighborTable>,
        weight: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        mode: Mode,
        slope: f64,
    ) -> Result<Var> {
        let (out, saved) = edgeconv::forward(
            self.value(x),
            nbrs,
            self.value(weight),
            self.value(gamma),
            self.value(beta),
            stats,
            mode,
            slope,
            [x, weight, gamma, beta],
        )?;
        Ok(self.push(out, &[x, weight, gamma, beta], Op::EdgeConv(Box::new(saved))))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(NumError::Contract("loss is not on this tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(NumError::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.apply_rule(idx, &g, &mut grads);
            grads[idx] = Some(g);
            visited += 1;
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            ops_visited: visited,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn apply_rule(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.value(*x).rows(), self.value(*x).cols());
                let fout = self.value(*w).cols();
                if self.wants(*x) {
                    let dx = kernels::matmul_bt(g, n, fout, self.value(*w).data(), fin);
                    accumulate(grads, *x, &dx);
                }
                if self.wants(*w) {
                    let dw = kernels::matmul_at(self.value(*x).data(), n, fin, g, fout);
                    accumulate(grads, *w, &dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![0.0; fout];
                        for row in g.chunks_exact(fout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(grads, *b, &db);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| if v >= 0.0 { gg } else { slope * gg })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let f = inv_std.len();
                let n = xhat.len() / f;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for i in 0..n {
                    for c in 0..f {
                        dgamma[c] += g[i * f + c] * xhat[i * f + c];
                        dbeta[c] += g[i * f + c];
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * f];
                    for i in 0..n {
                        for c in 0..f {
                            let dxhat = g[i * f + c] * gam[c];
                            dx[i * f + c] = if *train {
                                // Σ dxhat = γ·dβ and Σ dxhat·xhat = γ·dγ
                                inv_std[c]
                                    * (dxhat
                                        - (gam[c] * dbeta[c]) / n as f64
                                        - xhat[i * f + c] * (gam[c] * dgamma[c]) / n as f64)
                            } else {
                                inv_std[c] * dxhat
                            };
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, &dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, &dbeta);
                }
            }
            Op::SoftmaxPoints { x } => {
                let j = node.value.cols();
                let s = node.value.data();
                let mut inner = vec![0.0; j];
                for (srow, grow) in s.chunks_exact(j).zip(g.chunks_exact(j)) {
                    for c in 0..j {
                        inner[c] += srow[c] * grow[c];
                    }
                }
                let dx: Vec<f64> = s
                    .iter()
                    .zip(g)
                    .enumerate()
                    .map(|(e, (sv, gv))| sv * (gv - inner[e % j]))
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::MaxPool { x, argmax } => {
                let shape = self.value(*x).shape();
                let (n, k, f) = (shape[0], shape[1], shape[2]);
                let mut dx = vec![0.0; n * k * f];
                for i in 0..n {
                    for c in 0..f {
                        let jj = argmax[i * f + c] as usize;
                        dx[(i * k + jj) * f + c] += g[i * f + c];
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::Concat { parts } => {
                let total = node.value.cols();
                let n = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::EdgeFeatures { x, nbrs } => {
                let (n, f) = (self.value(*x).rows(), self.value(*x).cols());
                let k = nbrs.k();
                let mut dx = vec![0.0; n * f];
                for i in 0..n {
                    for (jj, &j) in nbrs.row(i).iter().enumerate() {
                        let base = (i * k + jj) * 2 * f;
                        let (gi, gd) = g[base..base + 2 * f].split_at(f);
                        for c in 0..f {
                            dx[i * f + c] += gi[c] - gd[c];
                        }
                        let j = j as usize;
                        for c in 0..f {
                            dx[j * f + c] += gd[c];
                        }
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::Reshape { x } => accumulate(grads, *x, g),
            Op::MatmulTn { a, b } => {
                let (n, j) = (self.value(*a).rows(), self.value(*a).cols());
                let c = self.value(*b).cols();
                if self.wants(*a) {
                    // d a = b · gᵀ
                    let da = kernels::matmul_bt(self.value(*b).data(), n, c, g, j);
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    let db = kernels::matmul(self.value(*a).data(), n, j, g, c);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let da: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &da);
                }
                if self.wants(*b) {
                    let db: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::Square { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, xv)| 2.0 * xv * gv)
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; self.value(*x).len()];
                accumulate(grads, *x, &dx);
            }
            Op::EdgeConv(saved) => {
                let [x, w, gamma, beta] = saved.inputs;
                let d = edgeconv::backward(
                    saved,
                    self.value(x),
                    self.value(w),
                    self.value(gamma),
                    self.value(beta),
                    g,
                    self.wants(x),
                );
                if let Some(dx) = d.dx {
                    accumulate(grads, x, &dx);
                }
                if self.wants(w) {
                    accumulate(grads, w, &d.dw);
                }
                if self.wants(gamma) {
                    accumulate(grads, gamma, &d.dgamma);
                }
                if self.wants(beta) {
                    accumulate(grads, beta, &d.dbeta);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
