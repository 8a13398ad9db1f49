//! Learnable tensors of the network and a flat, named view over them.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{LayerNorm, Linear};
use super::{cast, ModelConfig, Scalar};
use crate::skeleton::Pose;
use crate::so3::rotation_to_6d;

/// Standard deviation of the mask token and positional-encoding init.
pub const EMBED_INIT_STD: f64 = 0.02;
/// Gain applied to the regressor output layer at init.
pub const REGRESSOR_OUT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub ln1: LayerNorm<F>,
    /// Fused query/key/value projection, `D × 3D`.
    pub qkv: Linear<F>,
    pub proj: Linear<F>,
    pub ln2: LayerNorm<F>,
    pub ff1: Linear<F>,
    pub ff2: Linear<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub out: Linear<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub embed: Linear<F>,
    pub mask_token: Array1<F>,
    /// `T × D`.
    pub pos_enc: Array2<F>,
    pub blocks: Vec<Block<F>>,
    /// One entry when shared, otherwise one per block.
    pub regressors: Vec<Regressor<F>>,
    /// Regressor starting state (mean pose); a buffer, not trained.
    pub init_state: Array1<F>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

/// Mutable counterpart of [`TensorRef`].
pub struct TensorMut<'a, F> {
    pub name: String,
    pub data: &'a mut [F],
}

macro_rules! push_tensor {
    ($out:expr, $name:expr, $a:expr) => {
        $out.push(TensorRef {
            name: $name,
            shape: $a.shape().to_vec(),
            data: $a.as_slice().expect("standard layout"),
        })
    };
}

macro_rules! push_tensor_mut {
    ($out:expr, $name:expr, $a:expr) => {
        $out.push(TensorMut {
            name: $name,
            data: $a.as_slice_mut().expect("standard layout"),
        })
    };
}

impl<F: Scalar> Block<F> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Block {
            ln1: LayerNorm::zeros(d),
            qkv: Linear::zeros(d, 3 * d),
            proj: Linear::zeros(d, d),
            ln2: LayerNorm::zeros(d),
            ff1: Linear::zeros(d, cfg.ffn_dim),
            ff2: Linear::zeros(cfg.ffn_dim, d),
        }
    }

    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        Block {
            ln1: LayerNorm::new(d),
            qkv: Linear::xavier(d, 3 * d, 1.0, rng),
            proj: Linear::xavier(d, d, 1.0, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::xavier(d, cfg.ffn_dim, 1.0, rng),
            ff2: Linear::xavier(cfg.ffn_dim, d, 1.0, rng),
        }
    }
}

impl<F: Scalar> Regressor<F> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.regressor_hidden;
        Regressor {
            fc1: Linear::zeros(cfg.dim + cfg.state_dim(), h),
            fc2: Linear::zeros(h, h),
            out: Linear::zeros(h, cfg.state_dim()),
        }
    }

    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.regressor_hidden;
        Regressor {
            fc1: Linear::xavier(cfg.dim + cfg.state_dim(), h, 1.0, rng),
            fc2: Linear::xavier(h, h, 1.0, rng),
            out: Linear::xavier(h, cfg.state_dim(), REGRESSOR_OUT_GAIN, rng),
        }
    }
}

/// Regressor state vector for a pose: 6D rotations then root parameters.
pub fn pose_to_state(cfg: &ModelConfig, pose: &Pose) -> Vec<f64> {
    let mut v: Vec<f64> = pose.rotations().flat_map(|r| rotation_to_6d(r).0).collect();
    if cfg.translation_head {
        v.extend(cfg.camera.root_params(&pose.trans));
    }
    v
}

impl<F: Scalar> ModelParams<F> {
    /// All-zero tensors with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            embed: Linear::zeros(cfg.input_dim(), cfg.dim),
            mask_token: Array1::zeros(cfg.dim),
            pos_enc: Array2::zeros((cfg.seq_len, cfg.dim)),
            blocks: (0..cfg.layers).map(|_| Block::zeros(cfg)).collect(),
            regressors: (0..cfg.num_regressors()).map(|_| Regressor::zeros(cfg)).collect(),
            init_state: Array1::zeros(cfg.state_dim()),
        }
    }

    /// Random initialization; the regressor starts from `mean`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, mean: &Pose, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let embed = Linear::xavier(cfg.input_dim(), cfg.dim, 1.0, rng);
        let mask_token = Array1::from_shape_simple_fn(cfg.dim, || cast(normal.sample(rng)));
        let pos_enc = Array2::from_shape_simple_fn((cfg.seq_len, cfg.dim), || cast(normal.sample(rng)));
        let blocks = (0..cfg.layers).map(|_| Block::init(cfg, rng)).collect();
        let regressors = (0..cfg.num_regressors())
            .map(|_| Regressor::init(cfg, rng))
            .collect();
        let init_state = pose_to_state(cfg, mean).into_iter().map(cast).collect();
        ModelParams {
            embed,
            mask_token,
            pos_enc,
            blocks,
            regressors,
            init_state,
        }
    }

    /// Zeroes every regressor output layer, so the state never leaves its init.
    pub fn zero_output_heads(&mut self) {
        for r in &mut self.regressors {
            r.out.weight.fill(F::zero());
            r.out.bias.fill(F::zero());
        }
    }

    /// Every learnable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        push_tensor!(out, "embed.weight".to_string(), self.embed.weight);
        push_tensor!(out, "embed.bias".to_string(), self.embed.bias);
        push_tensor!(out, "mask_token".to_string(), self.mask_token);
        push_tensor!(out, "pos_enc".to_string(), self.pos_enc);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            push_tensor!(out, format!("{p}.ln1.gamma"), b.ln1.gamma);
            push_tensor!(out, format!("{p}.ln1.beta"), b.ln1.beta);
            push_tensor!(out, format!("{p}.qkv.weight"), b.qkv.weight);
            push_tensor!(out, format!("{p}.qkv.bias"), b.qkv.bias);
            push_tensor!(out, format!("{p}.proj.weight"), b.proj.weight);
            push_tensor!(out, format!("{p}.proj.bias"), b.proj.bias);
            push_tensor!(out, format!("{p}.ln2.gamma"), b.ln2.gamma);
            push_tensor!(out, format!("{p}.ln2.beta"), b.ln2.beta);
            push_tensor!(out, format!("{p}.ff1.weight"), b.ff1.weight);
            push_tensor!(out, format!("{p}.ff1.bias"), b.ff1.bias);
            push_tensor!(out, format!("{p}.ff2.weight"), b.ff2.weight);
            push_tensor!(out, format!("{p}.ff2.bias"), b.ff2.bias);
        }
        for (i, r) in self.regressors.iter().enumerate() {
            let p = format!("regressors.{i}");
            push_tensor!(out, format!("{p}.fc1.weight"), r.fc1.weight);
            push_tensor!(out, format!("{p}.fc1.bias"), r.fc1.bias);
            push_tensor!(out, format!("{p}.fc2.weight"), r.fc2.weight);
            push_tensor!(out, format!("{p}.fc2.bias"), r.fc2.bias);
            push_tensor!(out, format!("{p}.out.weight"), r.out.weight);
            push_tensor!(out, format!("{p}.out.bias"), r.out.bias);
        }
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, F>> {
        let mut out = Vec::new();
        push_tensor_mut!(out, "embed.weight".to_string(), self.embed.weight);
        push_tensor_mut!(out, "embed.bias".to_string(), self.embed.bias);
        push_tensor_mut!(out, "mask_token".to_string(), self.mask_token);
        push_tensor_mut!(out, "pos_enc".to_string(), self.pos_enc);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            push_tensor_mut!(out, format!("{p}.ln1.gamma"), b.ln1.gamma);
            push_tensor_mut!(out, format!("{p}.ln1.beta"), b.ln1.beta);
            push_tensor_mut!(out, format!("{p}.qkv.weight"), b.qkv.weight);
            push_tensor_mut!(out, format!("{p}.qkv.bias"), b.qkv.bias);
            push_tensor_mut!(out, format!("{p}.proj.weight"), b.proj.weight);
            push_tensor_mut!(out, format!("{p}.proj.bias"), b.proj.bias);
            push_tensor_mut!(out, format!("{p}.ln2.gamma"), b.ln2.gamma);
            push_tensor_mut!(out, format!("{p}.ln2.beta"), b.ln2.beta);
            push_tensor_mut!(out, format!("{p}.ff1.weight"), b.ff1.weight);
            push_tensor_mut!(out, format!("{p}.ff1.bias"), b.ff1.bias);
            push_tensor_mut!(out, format!("{p}.ff2.weight"), b.ff2.weight);
            push_tensor_mut!(out, format!("{p}.ff2.bias"), b.ff2.bias);
        }
        for (i, r) in self.regressors.iter_mut().enumerate() {
            let p = format!("regressors.{i}");
            push_tensor_mut!(out, format!("{p}.fc1.weight"), r.fc1.weight);
            push_tensor_mut!(out, format!("{p}.fc1.bias"), r.fc1.bias);
            push_tensor_mut!(out, format!("{p}.fc2.weight"), r.fc2.weight);
            push_tensor_mut!(out, format!("{p}.fc2.bias"), r.fc2.bias);
            push_tensor_mut!(out, format!("{p}.out.weight"), r.out.weight);
            push_tensor_mut!(out, format!("{p}.out.bias"), r.out.bias);
        }
        out
    }

    /// Exact number of learnable scalars (the init-state buffer excluded).
    pub fn count_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let lin = |l: &Linear<F>| Linear {
            weight: l.weight.mapv(|v| cast::<G>(v.to_f64().unwrap())),
            bias: l.bias.mapv(|v| cast::<G>(v.to_f64().unwrap())),
        };
        let ln = |l: &LayerNorm<F>| LayerNorm {
            gamma: l.gamma.mapv(|v| cast::<G>(v.to_f64().unwrap())),
            beta: l.beta.mapv(|v| cast::<G>(v.to_f64().unwrap())),
        };
        let c1 = |a: &Array1<F>| a.mapv(|v| cast::<G>(v.to_f64().unwrap()));
        ModelParams {
            embed: lin(&self.embed),
            mask_token: c1(&self.mask_token),
            pos_enc: self.pos_enc.mapv(|v| cast::<G>(v.to_f64().unwrap())),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: ln(&b.ln1),
                    qkv: lin(&b.qkv),
                    proj: lin(&b.proj),
                    ln2: ln(&b.ln2),
                    ff1: lin(&b.ff1),
                    ff2: lin(&b.ff2),
                })
                .collect(),
            regressors: self
                .regressors
                .iter()
                .map(|r| Regressor {
                    fc1: lin(&r.fc1),
                    fc2: lin(&r.fc2),
                    out: lin(&r.out),
                })
                .collect(),
            init_state: c1(&self.init_state),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
