use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::repr::InputLayout;

/// Hyperparameters of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length `T`.
    pub seq_len: usize,
    /// Embedding width `D`.
    pub dim: usize,
    /// Number of transformer blocks `L`.
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub regressor_hidden: usize,
    /// Regressor applications after each block.
    pub regressor_iters: usize,
    /// Dropout rate inside the regressor hidden layers (training only).
    pub dropout: f64,
    pub input_layout: InputLayout,
    /// Non-root joint count `K`.
    pub num_joints: usize,
    pub translation_head: bool,
    pub shared_regressor: bool,
    pub positional_encoding: bool,
    pub camera: CameraIntrinsics,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 16,
            dim: 512,
            layers: 4,
            heads: 8,
            ffn_dim: 512,
            regressor_hidden: 1024,
            regressor_iters: 1,
            dropout: 0.1,
            input_layout: InputLayout::Param6d,
            num_joints: 23,
            translation_head: true,
            shared_regressor: true,
            positional_encoding: true,
            camera: CameraIntrinsics::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if self.layers < 1 {
            return bad("layers must be at least 1");
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be divisible by heads");
        }
        if self.ffn_dim == 0 || self.regressor_hidden == 0 || self.regressor_iters == 0 {
            return bad("ffn_dim, regressor_hidden and regressor_iters must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.num_joints == 0 {
            return bad("num_joints must be positive");
        }
        self.camera.validate()
    }

    pub fn input_dim(&self) -> usize {
        self.input_layout.dim(self.num_joints + 1)
    }

    /// Width of the 6D rotation block of the regressed state.
    pub fn rot_dim(&self) -> usize {
        6 * (self.num_joints + 1)
    }

    /// Regressed state: stacked 6D rotations, then `(x2d, y2d, nearness)` when
    /// the translation head is on.
    pub fn state_dim(&self) -> usize {
        self.rot_dim() + if self.translation_head { 3 } else { 0 }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn num_regressors(&self) -> usize {
        if self.shared_regressor {
            1
        } else {
            self.layers
        }
    }

    pub fn regressor_for_layer(&self, layer: usize) -> usize {
        if self.shared_regressor {
            0
        } else {
            layer
        }
    }
}
