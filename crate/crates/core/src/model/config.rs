use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::skeleton::TEMPLATE_JOINT_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k_neighbors: usize,
    /// Output width of each EdgeConv stage.
    pub edge_widths: Vec<usize>,
    /// Width of the shared per-point block after concatenation.
    pub mlp_width: usize,
    pub joint_count: usize,
    pub use_normals: bool,
    pub leaky_slope: f64,
    /// Whether first-stage (3D) neighborhoods skip the query point itself.
    /// Later stages always include it.
    pub first_stage_excludes_self: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k_neighbors: 80,
            edge_widths: vec![64, 64, 128, 256],
            mlp_width: 512,
            joint_count: TEMPLATE_JOINT_COUNT,
            use_normals: true,
            leaky_slope: 0.2,
            first_stage_excludes_self: true,
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        if self.use_normals {
            6
        } else {
            3
        }
    }

    /// `(in, out)` per EdgeConv stage, chained from the input width.
    pub fn layer_widths(&self) -> Vec<(usize, usize)> {
        let mut fin = self.input_width();
        self.edge_widths
            .iter()
            .map(|&w| {
                let pair = (fin, w);
                fin = w;
                pair
            })
            .collect()
    }

    pub fn concat_width(&self) -> usize {
        self.edge_widths.iter().sum()
    }

    /// Trainable scalars: EdgeConv weights `2·in×out` with norm scale and
    /// shift, the shared block likewise, and the biased joint head.
    pub fn parameter_count(&self) -> usize {
        let edge: usize = self
            .layer_widths()
            .iter()
            .map(|&(i, o)| 2 * i * o + 2 * o)
            .sum();
        let mlp = self.concat_width() * self.mlp_width + 2 * self.mlp_width;
        let head = self.mlp_width * self.joint_count + self.joint_count;
        edge + mlp + head
    }

    /// Smallest cloud the network accepts.
    pub fn min_points(&self) -> usize {
        self.k_neighbors + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.k_neighbors == 0 {
            return fail("k_neighbors must be at least 1".into());
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) {
            return fail(format!("edge_widths must be non-empty and positive, got {:?}", self.edge_widths));
        }
        if self.mlp_width == 0 || self.joint_count == 0 {
            return fail("mlp_width and joint_count must be positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope must lie in (0,1), got {}", self.leaky_slope));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths_chain() {
        let c = ModelConfig::default();
        assert_eq!(c.layer_widths(), vec![(6, 64), (64, 64), (64, 128), (128, 256)]);
        assert_eq!(c.concat_width(), 512);
    }

    #[test]
    fn no_normals_narrows_the_first_layer() {
        let c = ModelConfig {
            use_normals: false,
            ..ModelConfig::default()
        };
        assert_eq!(c.layer_widths()[0], (3, 64));
        assert_eq!(c.parameter_count(), ModelConfig::default().parameter_count() - 2 * 3 * 64);
    }

    #[test]
    fn default_parameter_count() {
        let by_hand = (12 * 64 + 128) + (128 * 64 + 128) + (128 * 128 + 256) + (256 * 256 + 512)
            + (512 * 512 + 1024)
            + (512 * 69 + 69);
        assert_eq!(ModelConfig::default().parameter_count(), by_hand);
    }
}
