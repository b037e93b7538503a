//! Fused EdgeConv kernel.
//!
//! With `W = [W_top; W_bot]` acting on edge features `(x_i, x_j − x_i)`, the
//! pre-activation of edge `(i, j)` splits into per-point terms:
//!
//! ```text
//! z_ij = x_i·(W_top − W_bot) + x_j·W_bot = P_i + Q_j
//! ```
//!
//! so the linear map costs two `N×F` products instead of one `N·k×2F`
//! product, and the normalization, activation and pooling stream over edges
//! while keeping only `N×F'` buffers alive.

use std::sync::Arc;

use crate::error::{NumError, Result};
use crate::kernels;
use crate::tape::{BatchNormStats, Mode, NeighborTable, Var};
use crate::tensor::Tensor;

pub(crate) struct EdgeConvSaved {
    pub inputs: [Var; 4],
    nbrs: Arc<NeighborTable>,
    /// `X·(W_top − W_bot)`, `N×Fo`
    p: Vec<f64>,
    /// `X·W_bot`, `N×Fo`
    q: Vec<f64>,
    w_diff: Vec<f64>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    argmax: Vec<u32>,
    slope: f64,
    train: bool,
}

pub(crate) struct EdgeConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    x: &Tensor,
    nbrs: Arc<NeighborTable>,
    w: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut BatchNormStats,
    mode: Mode,
    slope: f64,
    inputs: [Var; 4],
) -> Result<(Tensor, EdgeConvSaved)> {
    let (n, f) = x.expect_rank2("edge conv input")?;
    let (w_rows, fo) = w.expect_rank2("edge conv weight")?;
    if w_rows != 2 * f {
        return Err(NumError::Dimension(format!(
            "edge conv weight has {w_rows} rows, edge features have {}",
            2 * f
        )));
    }
    if nbrs.points() != n {
        return Err(NumError::Dimension(format!(
            "neighbor table covers {} points, features have {n}",
            nbrs.points()
        )));
    }
    if gamma.len() != fo || beta.len() != fo || stats.features() != fo {
        return Err(NumError::Dimension(format!(
            "edge conv normalization expects {fo} features"
        )));
    }
    if !(slope > 0.0 && slope < 1.0) {
        return Err(NumError::Contract(format!(
            "leaky slope must lie in (0,1), got {slope}"
        )));
    }
    let k = nbrs.k();
    let edges = n * k;
    let wd = w.data();
    let (w_top, w_bot) = wd.split_at(f * fo);
    let w_diff: Vec<f64> = w_top.iter().zip(w_bot).map(|(a, b)| a - b).collect();
    let p = kernels::matmul(x.data(), n, f, &w_diff, fo);
    let q = kernels::matmul(x.data(), n, f, w_bot, fo);

    let (mean, var) = match mode {
        Mode::Train => {
            if edges < 2 {
                return Err(NumError::DegenerateBatch(edges));
            }
            let mut sum = vec![0.0; fo];
            let mut z = vec![0.0; fo];
            for i in 0..n {
                let pi = &p[i * fo..(i + 1) * fo];
                for &j in nbrs.row(i) {
                    let qj = &q[j as usize * fo..(j as usize + 1) * fo];
                    for c in 0..fo {
                        z[c] = pi[c] + qj[c];
                        sum[c] += z[c];
                    }
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / edges as f64).collect();
            let mut var = vec![0.0; fo];
            for i in 0..n {
                let pi = &p[i * fo..(i + 1) * fo];
                for &j in nbrs.row(i) {
                    let qj = &q[j as usize * fo..(j as usize + 1) * fo];
                    for c in 0..fo {
                        let d = (pi[c] + qj[c]) - mean[c];
                        var[c] += d * d;
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= edges as f64);
            stats.update(&mean, &var, edges);
            (mean, var)
        }
        Mode::Eval => (stats.running_mean.clone(), stats.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
    let g = gamma.data();
    let b = beta.data();

    let mut out = vec![0.0; n * fo];
    let mut argmax = vec![0u32; n * fo];
    for i in 0..n {
        let pi = &p[i * fo..(i + 1) * fo];
        let best = &mut out[i * fo..(i + 1) * fo];
        let arg = &mut argmax[i * fo..(i + 1) * fo];
        for (jj, &j) in nbrs.row(i).iter().enumerate() {
            let qj = &q[j as usize * fo..(j as usize + 1) * fo];
            for c in 0..fo {
                let y = g[c] * (((pi[c] + qj[c]) - mean[c]) * inv_std[c]) + b[c];
                let a = if y >= 0.0 { y } else { slope * y };
                if jj == 0 || a > best[c] {
                    best[c] = a;
                    arg[c] = jj as u32;
                }
            }
        }
    }
    let saved = EdgeConvSaved {
        inputs,
        nbrs,
        p,
        q,
        w_diff,
        mean,
        inv_std,
        argmax,
        slope,
        train: mode == Mode::Train,
    };
    Ok((Tensor::from_op(vec![n, fo], out), saved))
}

pub(crate) fn backward(
    s: &EdgeConvSaved,
    x: &Tensor,
    w: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    grad_out: &[f64],
    want_dx: bool,
) -> EdgeConvGrads {
    let (n, f) = (x.rows(), x.cols());
    let fo = gamma.len();
    let k = s.nbrs.k();
    let edges = (n * k) as f64;
    let g = gamma.data();
    let b = beta.data();

    // Upstream gradient only reaches the pooled (argmax) edge of each (i, c).
    let mut dy = vec![0.0; n * fo];
    let mut dgamma = vec![0.0; fo];
    let mut dbeta = vec![0.0; fo];
    for i in 0..n {
        let row = s.nbrs.row(i);
        for c in 0..fo {
            let j = row[s.argmax[i * fo + c] as usize] as usize;
            let zhat = ((s.p[i * fo + c] + s.q[j * fo + c]) - s.mean[c]) * s.inv_std[c];
            let y = g[c] * zhat + b[c];
            let d = grad_out[i * fo + c] * if y >= 0.0 { 1.0 } else { s.slope };
            dy[i * fo + c] = d;
            dgamma[c] += d * zhat;
            dbeta[c] += d;
        }
    }

    // dz_e = inv·(γ·dy_e − Σγ·dy/M − ẑ_e·Σγ·dy·ẑ/M); the two sums are dense
    // terms shared by every edge and vanish in eval mode.
    let (c1, c2): (Vec<f64>, Vec<f64>) = if s.train {
        (0..fo)
            .map(|c| {
                (
                    -s.inv_std[c] * g[c] * dbeta[c] / edges,
                    -s.inv_std[c] * g[c] * dgamma[c] / edges,
                )
            })
            .unzip()
    } else {
        (vec![0.0; fo], vec![0.0; fo])
    };
    let sparse_scale: Vec<f64> = (0..fo).map(|c| s.inv_std[c] * g[c]).collect();

    let mut dp = vec![0.0; n * fo];
    let mut dq = vec![0.0; n * fo];
    if s.train {
        // Σ_j ẑ_ij over the neighbors of i, and Σ of P_i over edges into m.
        let mut sum_q = vec![0.0; n * fo];
        let mut sum_p_in = vec![0.0; n * fo];
        let mut in_count = vec![0usize; n];
        for i in 0..n {
            for &j in s.nbrs.row(i) {
                let j = j as usize;
                in_count[j] += 1;
                for c in 0..fo {
                    sum_q[i * fo + c] += s.q[j * fo + c];
                    sum_p_in[j * fo + c] += s.p[i * fo + c];
                }
            }
        }
        let kf = k as f64;
        for i in 0..n {
            for c in 0..fo {
                let e = i * fo + c;
                let zsum = (kf * s.p[e] + sum_q[e] - kf * s.mean[c]) * s.inv_std[c];
                dp[e] = kf * c1[c] + c2[c] * zsum;
                let cnt = in_count[i] as f64;
                let zin = (sum_p_in[e] + cnt * s.q[e] - cnt * s.mean[c]) * s.inv_std[c];
                dq[e] = cnt * c1[c] + c2[c] * zin;
            }
        }
    }
    for i in 0..n {
        let row = s.nbrs.row(i);
        for c in 0..fo {
            let e = i * fo + c;
            let v = sparse_scale[c] * dy[e];
            dp[e] += v;
            let j = row[s.argmax[e] as usize] as usize;
            dq[j * fo + c] += v;
        }
    }

    let xd = x.data();
    let dwd = kernels::matmul_at(xd, n, f, &dp, fo);
    let dwb = kernels::matmul_at(xd, n, f, &dq, fo);
    let mut dw = Vec::with_capacity(2 * f * fo);
    dw.extend_from_slice(&dwd);
    dw.extend(dwb.iter().zip(&dwd).map(|(bq, dd)| bq - dd));

    let dx = want_dx.then(|| {
        let w_bot = &w.data()[f * fo..];
        let mut dx = kernels::matmul_bt(&dp, n, fo, &s.w_diff, f);
        let from_q = kernels::matmul_bt(&dq, n, fo, w_bot, f);
        for (a, bq) in dx.iter_mut().zip(&from_q) {
            *a += bq;
        }
        dx
    });
    EdgeConvGrads {
        dx,
        dw,
        dgamma,
        dbeta,
    }
}
