use std::sync::Arc;

use geometry::{KnnIndex, PointCloud};
use nalgebra::Point3;
use numcore::{init, BatchNormStats, Mode, NeighborTable, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;

/// Where an EdgeConv stage looks for neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborSpace {
    /// Input point coordinates.
    Points,
    /// The stage's input features.
    Features,
}

/// The three trainable tensors of one normalized block.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub weight: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// `N×k` neighbor table over the rows of `data` (`N×dim`).
pub fn neighbor_table(data: &[f64], dim: usize, k: usize, exclude_self: bool) -> Result<NeighborTable> {
    let n = data.len() / dim.max(1);
    let available = if exclude_self { n.saturating_sub(1) } else { n };
    if k > available {
        return Err(CoreError::Contract(format!(
            "cloud has {n} points but k = {k} neighbors are needed; supply at least {} points or lower k_neighbors",
            k + 1
        )));
    }
    let idx = KnnIndex::auto(data, dim)?.knn_self(k, exclude_self)?;
    Ok(NeighborTable::new(n, k, idx)?)
}

/// Edge features `(x_i, x_j − x_i)`, shaped `N×k×2F`.
pub fn edge_features(x: &Tensor, nbrs: &NeighborTable) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let e = tape.edge_features(xv, Arc::new(nbrs.clone()))?;
    Ok(tape.value(e).clone())
}

/// One EdgeConv stage: neighborhoods in `space`, then the shared block over
/// edge features and max pooling over neighbors.
#[allow(clippy::too_many_arguments)]
pub fn edgeconv_forward(
    tape: &mut Tape,
    x: Var,
    points: &Tensor,
    block: BlockVars,
    stats: &mut BatchNormStats,
    k: usize,
    space: NeighborSpace,
    exclude_self: bool,
    mode: Mode,
    slope: f64,
) -> Result<Var> {
    let nbrs = match space {
        NeighborSpace::Points => neighbor_table(points.data(), points.cols(), k, exclude_self)?,
        NeighborSpace::Features => {
            let xv = tape.value(x);
            neighbor_table(xv.data(), xv.cols(), k, exclude_self)?
        }
    };
    Ok(tape.edge_conv(
        x,
        Arc::new(nbrs),
        block.weight,
        block.gamma,
        block.beta,
        stats,
        mode,
        slope,
    )?)
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `N×J`; every column is a convex weight vector over the points.
    pub coefficients: Tensor,
    pub joints: Vec<Point3<f64>>,
    /// `(rows, cols)` after each EdgeConv stage, the concatenation, the
    /// shared block and the joint head.
    pub stage_shapes: Vec<(usize, usize)>,
}

/// Variables of a forward pass recorded on a tape.
pub struct ForwardVars {
    pub params: Vec<Var>,
    pub coefficients: Var,
    pub joints: Var,
    pub stage_shapes: Vec<(usize, usize)>,
}

/// EdgeConv joint localizer: each joint is a softmax-weighted average of
/// the input points.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLocalizer {
    config: ModelConfig,
    params: Vec<Tensor>,
    stats: Vec<BatchNormStats>,
}

impl JointLocalizer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut block = |fin: usize, fout: usize, params: &mut Vec<Tensor>| {
            params.push(init::uniform_weight(fin, fout, &mut rng));
            params.push(init::constant(fout, 1.0));
            params.push(init::constant(fout, 0.0));
        };
        for (fin, fout) in config.layer_widths() {
            block(2 * fin, fout, &mut params);
            stats.push(BatchNormStats::new(fout));
        }
        block(config.concat_width(), config.mlp_width, &mut params);
        stats.push(BatchNormStats::new(config.mlp_width));
        params.push(init::uniform_weight(config.mlp_width, config.joint_count, &mut rng));
        params.push(init::constant(config.joint_count, 0.0));
        Ok(JointLocalizer { config, params, stats })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>, stats: Vec<BatchNormStats>) -> Result<Self> {
        let template = JointLocalizer::new(config.clone(), 0)?;
        if params.len() != template.params.len() || stats.len() != template.stats.len() {
            return Err(CoreError::Contract(format!(
                "expected {} parameter tensors and {} norm layers, got {} and {}",
                template.params.len(),
                template.stats.len(),
                params.len(),
                stats.len()
            )));
        }
        for (i, (p, t)) in params.iter().zip(&template.params).enumerate() {
            if p.shape() != t.shape() {
                return Err(CoreError::Contract(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    template.parameter_names()[i],
                    p.shape(),
                    t.shape()
                )));
            }
        }
        for (s, t) in stats.iter().zip(&template.stats) {
            if s.features() != t.features() || s.running_var.len() != t.features() {
                return Err(CoreError::Contract("norm statistics do not match the configuration".into()));
            }
        }
        Ok(JointLocalizer { config, params, stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn norm_stats(&self) -> &[BatchNormStats] {
        &self.stats
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Names aligned with [`JointLocalizer::parameters`].
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let block = |prefix: String, names: &mut Vec<String>| {
            for part in ["weight", "gamma", "beta"] {
                names.push(format!("{prefix}.{part}"));
            }
        };
        for l in 0..self.config.edge_widths.len() {
            block(format!("edgeconv{}", l + 1), &mut names);
        }
        block("shared".into(), &mut names);
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    /// Network input: points, then normals when the model uses them.
    pub fn input_tensor(&self, cloud: &PointCloud) -> Result<Tensor> {
        let width = self.config.input_width();
        let normals = match (&cloud.normals, self.config.use_normals) {
            (Some(n), true) => Some(n),
            (None, true) => {
                return Err(CoreError::Contract("model expects normals but the cloud has none".into()))
            }
            _ => None,
        };
        let mut data = Vec::with_capacity(cloud.len() * width);
        for (i, p) in cloud.points.iter().enumerate() {
            data.extend_from_slice(p.coords.as_slice());
            if let Some(n) = normals {
                data.extend_from_slice(n[i].as_slice());
            }
        }
        Ok(Tensor::new(vec![cloud.len(), width], data)?)
    }

    /// Records a full forward pass. In [`Mode::Train`] the norm layers use
    /// batch statistics and update their running estimates.
    pub fn record(&mut self, tape: &mut Tape, cloud: &PointCloud, mode: Mode) -> Result<ForwardVars> {
        let n = cloud.len();
        if n < self.config.min_points() {
            return Err(CoreError::Contract(format!(
                "cloud has {n} points but the model needs more than k = {} (at least {})",
                self.config.k_neighbors,
                self.config.min_points()
            )));
        }
        let input = self.input_tensor(cloud)?;
        let points_data: Vec<f64> = cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let points = Tensor::new(vec![n, 3], points_data)?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let cfg = &self.config;
        let mut x = tape.constant(input);
        let mut stage_outputs = Vec::new();
        let mut stage_shapes = Vec::new();
        for l in 0..cfg.edge_widths.len() {
            let block = BlockVars {
                weight: params[3 * l],
                gamma: params[3 * l + 1],
                beta: params[3 * l + 2],
            };
            let (space, exclude) = if l == 0 {
                (NeighborSpace::Points, cfg.first_stage_excludes_self)
            } else {
                (NeighborSpace::Features, false)
            };
            x = edgeconv_forward(
                tape,
                x,
                &points,
                block,
                &mut self.stats[l],
                cfg.k_neighbors,
                space,
                exclude,
                mode,
                cfg.leaky_slope,
            )?;
            stage_outputs.push(x);
            stage_shapes.push(shape2(tape.value(x)));
        }
        let concat = tape.concat_features(&stage_outputs)?;
        stage_shapes.push(shape2(tape.value(concat)));
        let m = 3 * cfg.edge_widths.len();
        let hidden = tape.linear(concat, params[m], None)?;
        let hidden = tape.batch_norm_points(
            hidden,
            params[m + 1],
            params[m + 2],
            &mut self.stats[cfg.edge_widths.len()],
            mode,
        )?;
        let hidden = tape.leaky_relu(hidden, cfg.leaky_slope)?;
        stage_shapes.push(shape2(tape.value(hidden)));
        let logits = tape.linear(hidden, params[m + 3], Some(params[m + 4]))?;
        stage_shapes.push(shape2(tape.value(logits)));
        let coefficients = tape.softmax_over_points(logits)?;
        let p = tape.constant(points);
        let joints = tape.matmul_tn(coefficients, p)?;
        Ok(ForwardVars {
            params,
            coefficients,
            joints,
            stage_shapes,
        })
    }

    /// Inference with frozen norm statistics.
    pub fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        let mut frozen = self.clone();
        let mut tape = Tape::new();
        let vars = frozen.record(&mut tape, cloud, Mode::Eval)?;
        Ok(Prediction {
            coefficients: tape.value(vars.coefficients).clone(),
            joints: rows_to_points(tape.value(vars.joints)),
            stage_shapes: vars.stage_shapes,
        })
    }

    /// Training-mode loss and its gradient for every parameter, in
    /// [`JointLocalizer::parameters`] order. Updates the running statistics.
    pub fn loss_and_gradients(&mut self, cloud: &PointCloud, target: &[Point3<f64>]) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, cloud, Mode::Train)?;
        let loss = loss_on_tape(&mut tape, vars.joints, target)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, vars.params.iter().map(|&v| grads.wrt(v)).collect()))
    }

    /// Loss of a forward pass in `mode`, without gradients.
    pub fn loss(&mut self, cloud: &PointCloud, target: &[Point3<f64>], mode: Mode) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, cloud, mode)?;
        let loss = loss_on_tape(&mut tape, vars.joints, target)?;
        Ok(tape.value(loss).data()[0])
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn rows_to_points(t: &Tensor) -> Vec<Point3<f64>> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            Point3::new(row[0], row[1], row[2])
        })
        .collect()
}

fn points_tensor(points: &[Point3<f64>]) -> Result<Tensor> {
    Ok(Tensor::new(
        vec![points.len(), 3],
        points.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
    )?)
}

fn loss_on_tape(tape: &mut Tape, joints: Var, target: &[Point3<f64>]) -> Result<Var> {
    let j = tape.value(joints).rows();
    if target.len() != j {
        return Err(CoreError::Contract(format!(
            "prediction has {j} joints but the target has {}",
            target.len()
        )));
    }
    let gt = tape.constant(points_tensor(target)?);
    let diff = tape.sub(joints, gt)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// Sum of squared distances between matching joints.
pub fn loss(pred: &[Point3<f64>], gt: &[Point3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(CoreError::Contract(format!(
            "prediction has {} joints but the target has {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm_squared()).sum())
}

/// Joints as coefficient-weighted sums of the points: `Aᵀ·P`.
pub fn combine(coefficients: &Tensor, points: &[Point3<f64>]) -> Result<Vec<Point3<f64>>> {
    if coefficients.shape().len() != 2 || coefficients.rows() != points.len() {
        return Err(CoreError::Contract(format!(
            "coefficients {:?} do not match {} points",
            coefficients.shape(),
            points.len()
        )));
    }
    let (n, j) = (coefficients.rows(), coefficients.cols());
    let mut out = vec![Point3::origin(); j];
    for i in 0..n {
        let row = coefficients.row(i);
        for (k, o) in out.iter_mut().enumerate() {
            o.coords += points[i].coords * row[k];
        }
    }
    Ok(out)
}

/// Evidence that every predicted joint is a convex combination of the points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HullCertificate {
    pub min_coefficient: f64,
    /// Largest `|column sum − 1|`.
    pub max_sum_error: f64,
    /// Largest distance between the emitted joints and `Aᵀ·P`.
    pub max_residual: f64,
}

impl HullCertificate {
    pub fn check(prediction: &Prediction, points: &[Point3<f64>]) -> Result<Self> {
        let a = &prediction.coefficients;
        let (n, j) = (a.rows(), a.cols());
        let mut sums = vec![0.0; j];
        let mut min_coefficient = f64::INFINITY;
        for i in 0..n {
            for (k, v) in a.row(i).iter().enumerate() {
                sums[k] += v;
                min_coefficient = min_coefficient.min(*v);
            }
        }
        let max_sum_error = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        let recomputed = combine(a, points)?;
        let max_residual = recomputed
            .iter()
            .zip(&prediction.joints)
            .map(|(r, p)| (r - p).norm())
            .fold(0.0, f64::max);
        Ok(HullCertificate {
            min_coefficient,
            max_sum_error,
            max_residual,
        })
    }

    pub fn holds(&self, sum_tol: f64, residual_tol: f64) -> bool {
        self.min_coefficient >= 0.0 && self.max_sum_error <= sum_tol && self.max_residual <= residual_tol
    }
}
