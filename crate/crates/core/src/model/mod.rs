//! The sequence network: input embedding with a learnable mask token, a stack
//! of pre-layernorm transformer blocks, and a regressor shared across time
//! that refines a pose estimate after every block, starting from the mean pose.

mod attention;
mod config;
mod layers;
mod network;
mod params;

use nalgebra::Vector3;
use ndarray::Array2;

pub use attention::{attention_backward, attention_forward, AttentionCache};
pub use config::ModelConfig;
pub use layers::{LayerNorm, Linear, LN_EPS};
pub use network::{Dropout, ForwardCache, PoseBert};
pub use params::{pose_to_state, Block, ModelParams, Regressor, TensorMut, TensorRef};

use crate::error::Result;
use crate::repr::build_input;
use crate::skeleton::{Frame, Pose, SkeletonDef, DEFAULT_ROOT_DEPTH};

/// Floating-point types the network runs in: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable")
}

pub(crate) fn default_translation() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, DEFAULT_ROOT_DEPTH)
}

/// Input matrix (`frames × input_dim`) and visibility for a window. Hidden
/// frames get zero rows; the network never reads them.
pub fn window_inputs<F: Scalar>(cfg: &ModelConfig, skel: &SkeletonDef, frames: &[Frame]) -> Result<(Array2<F>, Vec<bool>)> {
    let dim = cfg.input_dim();
    let mut x = Array2::zeros((frames.len(), dim));
    for (mut row, f) in x.rows_mut().into_iter().zip(frames) {
        if f.visible {
            let v = build_input(&f.pose, skel, cfg.input_layout, &cfg.camera)?;
            for (o, &val) in row.iter_mut().zip(&v.values) {
                *o = cast(val);
            }
        }
    }
    Ok((x, frames.iter().map(|f| f.visible).collect()))
}

impl<F: Scalar> PoseBert<F> {
    /// Runs equally long windows as one batch (dropout off) and decodes poses.
    pub fn predict_windows(&self, skel: &SkeletonDef, windows: &[&[Frame]]) -> Result<Vec<Vec<Pose>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let len = windows[0].len();
        let dim = self.config.input_dim();
        let mut inputs = Array2::zeros((windows.len() * len, dim));
        let mut visible = Vec::with_capacity(windows.len() * len);
        for (b, w) in windows.iter().enumerate() {
            if w.len() != len {
                return Err(crate::Error::LengthMismatch {
                    expected: len,
                    got: w.len(),
                });
            }
            let (x, vis) = window_inputs::<F>(&self.config, skel, w)?;
            inputs.slice_mut(ndarray::s![b * len..(b + 1) * len, ..]).assign(&x);
            visible.extend(vis);
        }
        let (state, _) = self.forward(&inputs.view(), &visible, windows.len(), Dropout::Off)?;
        let poses = self.decode_state(&state.view())?;
        Ok(poses.chunks(len).map(|c| c.to_vec()).collect())
    }

    pub fn predict_window(&self, skel: &SkeletonDef, frames: &[Frame]) -> Result<Vec<Pose>> {
        Ok(self.predict_windows(skel, &[frames])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{geodesic_distance, random_rotation, Rotation};
    use ndarray::{s, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(k: usize) -> ModelConfig {
        ModelConfig {
            seq_len: 4,
            dim: 16,
            layers: 2,
            heads: 2,
            ffn_dim: 16,
            regressor_hidden: 24,
            num_joints: k,
            ..ModelConfig::default()
        }
    }

    fn model(cfg: &ModelConfig, seed: u64) -> PoseBert<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = Pose::identity(cfg.num_joints, Vector3::new(0.0, 0.0, 3.0));
        PoseBert::new(cfg.clone(), ModelParams::init(cfg, &mean, &mut rng))
    }

    fn random_inputs(cfg: &ModelConfig, rows: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cfg.input_dim()), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn masked_embedding_is_token_plus_position() {
        let cfg = tiny(2);
        let m = model(&cfg, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_inputs(&cfg, 8, &mut rng);
        let e = m.embed_inputs(&x.view(), &[false; 8], 2).unwrap();
        for r in 0..8 {
            let want = &m.params.mask_token + &m.params.pos_enc.row(r % 4);
            assert_eq!(e.row(r), want);
        }
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let cfg = tiny(2);
        let m = PoseBert::new(cfg.clone(), ModelParams::<f64>::zeros(&cfg));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_inputs(&cfg, 4, &mut rng);
        let e = m.embed_inputs(&x.view(), &[true; 4], 1).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_shape_errors() {
        let cfg = tiny(2);
        let m = model(&cfg, 0);
        let x = Array2::<f64>::zeros((4, cfg.input_dim() + 1));
        assert!(matches!(
            m.embed_inputs(&x.view(), &[true; 4], 1),
            Err(crate::Error::LengthMismatch { .. })
        ));
        let x = Array2::<f64>::zeros((4, cfg.input_dim()));
        assert!(m.embed_inputs(&x.view(), &[true; 3], 1).is_err());
        let x = Array2::<f64>::zeros((5, cfg.input_dim()));
        assert!(m.embed_inputs(&x.view(), &[true; 5], 1).is_err());
    }

    #[test]
    fn block_with_zero_output_weights_is_identity() {
        let cfg = tiny(2);
        let mut m = model(&cfg, 3);
        for b in &mut m.params.blocks {
            b.proj = Linear::zeros(cfg.dim, cfg.dim);
            b.ff2 = Linear::zeros(cfg.ffn_dim, cfg.dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((8, cfg.dim), || rng.random_range(-1.0..1.0));
        assert_eq!(m.transformer_block(0, &x.view(), 2), x);
    }

    #[test]
    fn single_frame_block_is_finite() {
        let cfg = tiny(2);
        let m = model(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_simple_fn((3, cfg.dim), || rng.random_range(-1.0..1.0));
        let y = m.transformer_block(1, &x.view(), 3);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn regressor_step_properties() {
        let cfg = tiny(2);
        let mut m = model(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let row_x = Array1::from_shape_simple_fn(cfg.dim, || rng.random_range(-1.0..1.0));
        let row_s = Array1::from_shape_simple_fn(cfg.state_dim(), || rng.random_range(-1.0..1.0));
        let x = ndarray::stack![ndarray::Axis(0), row_x, row_x];
        let st = ndarray::stack![ndarray::Axis(0), row_s, row_s];
        let d = m.regressor_step(0, &x.view(), &st.view());
        assert_eq!(d.row(0), d.row(1));
        assert!(d.iter().any(|&v| v != 0.0));
        m.params.zero_output_heads();
        let d = m.regressor_step(0, &x.view(), &st.view());
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_heads_return_the_mean_pose() {
        let skel = crate::skeleton::SkeletonDef::body23();
        let cfg = ModelConfig {
            num_joints: 23,
            ..tiny(23)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = Pose {
            global_orient: random_rotation(&mut rng),
            joint_rots: (0..23).map(|_| random_rotation(&mut rng)).collect(),
            trans: Vector3::new(0.1, -0.2, 4.0),
        };
        let mut params = ModelParams::<f32>::init(&cfg, &mean, &mut rng);
        params.zero_output_heads();
        let m = PoseBert::new(cfg, params);
        let frames: Vec<Frame> = (0..4)
            .map(|i| Frame {
                pose: Pose::identity(23, Vector3::new(0.0, 0.0, 5.0)),
                visible: i != 2,
            })
            .collect();
        for pose in m.predict_window(&skel, &frames).unwrap() {
            for (a, b) in pose.rotations().zip(mean.rotations()) {
                assert!(geodesic_distance(a, b) < 1e-3);
            }
            assert!((pose.trans - mean.trans).norm() < 1e-4);
        }
    }

    #[test]
    fn masked_inputs_do_not_affect_output() {
        let cfg = tiny(2);
        let m = model(&cfg, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_inputs(&cfg, 8, &mut rng);
        let vis = [true, false, true, true, false, true, true, true];
        let (a, _) = m.forward(&x.view(), &vis, 2, Dropout::Off).unwrap();
        let mut y = x.clone();
        y.row_mut(1).fill(123.0);
        y.row_mut(4).mapv_inplace(|v| -v * 7.0);
        let (b, _) = m.forward(&y.view(), &vis, 2, Dropout::Off).unwrap();
        assert_eq!(a, b);
        // a visible perturbation does change it
        let mut z = x.clone();
        z[[0, 0]] += 0.5;
        let (c, _) = m.forward(&z.view(), &vis, 2, Dropout::Off).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_is_deterministic_and_outputs_rotations() {
        let skel = crate::skeleton::SkeletonDef::body23();
        let cfg = tiny(23);
        let m = model(&cfg, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let frames: Vec<Frame> = (0..4)
            .map(|_| Frame {
                pose: Pose {
                    global_orient: random_rotation(&mut rng),
                    joint_rots: (0..23).map(|_| random_rotation(&mut rng)).collect(),
                    trans: Vector3::new(0.0, 0.0, 5.0),
                },
                visible: true,
            })
            .collect();
        let a = m.predict_window(&skel, &frames).unwrap();
        let b = m.predict_window(&skel, &frames).unwrap();
        assert_eq!(a, b);
        for p in &a {
            assert!(p.rotations().all(|r| r.is_valid(1e-6)));
        }
    }

    #[test]
    fn dropout_changes_training_output_only() {
        let cfg = ModelConfig {
            dropout: 0.5,
            ..tiny(2)
        };
        let m = model(&cfg, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_inputs(&cfg, 4, &mut rng);
        let vis = [true; 4];
        let (e1, _) = m.forward(&x.view(), &vis, 1, Dropout::Off).unwrap();
        let (e2, _) = m.forward(&x.view(), &vis, 1, Dropout::Off).unwrap();
        assert_eq!(e1, e2);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let (t1, _) = m.forward(&x.view(), &vis, 1, Dropout::On(&mut r1)).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let (t2, _) = m.forward(&x.view(), &vis, 1, Dropout::On(&mut r2)).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, e1);
    }

    #[test]
    fn toy_parameter_count() {
        let cfg = ModelConfig {
            seq_len: 2,
            dim: 1,
            layers: 1,
            heads: 1,
            ffn_dim: 1,
            regressor_hidden: 1,
            num_joints: 1,
            ..ModelConfig::default()
        };
        // input 12, state 15
        let embed = 12 + 1;
        let mask = 1;
        let pe = 2;
        let block = 2 + (3 + 3) + (1 + 1) + 2 + (1 + 1) + (1 + 1);
        let regressor = (16 + 1) + (1 + 1) + (15 + 15);
        let p = ModelParams::<f32>::zeros(&cfg);
        assert_eq!(p.count_parameters(), embed + mask + pe + block + regressor);
    }

    #[test]
    fn parameter_count_is_additive_in_depth() {
        let base = ModelParams::<f32>::zeros(&ModelConfig::default()).count_parameters();
        let deeper = ModelParams::<f32>::zeros(&ModelConfig {
            layers: 8,
            ..ModelConfig::default()
        })
        .count_parameters();
        let d = 512;
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * d + d) * 2;
        assert_eq!(deeper - base, 4 * block);
        let unshared = ModelParams::<f32>::zeros(&ModelConfig {
            shared_regressor: false,
            ..ModelConfig::default()
        })
        .count_parameters();
        assert!(unshared > base);
    }

    #[test]
    fn default_parameter_budget() {
        let n = ModelParams::<f32>::zeros(&ModelConfig::default()).count_parameters() as f64;
        assert!((n / 7.3e6 - 1.0).abs() <= 0.15, "{n}");
    }

    #[test]
    fn init_state_starts_at_mean() {
        let cfg = tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mean = Pose {
            global_orient: Rotation::about_axis(Vector3::z(), 0.3),
            joint_rots: vec![Rotation::identity(); 2],
            trans: Vector3::new(0.0, 0.0, 4.0),
        };
        let p = ModelParams::<f64>::init(&cfg, &mean, &mut rng);
        let st = pose_to_state(&cfg, &mean);
        assert_eq!(p.init_state.to_vec(), st);
        assert_eq!(p.init_state.slice(s![cfg.rot_dim() + 2]).into_scalar(), &-(4.0f64.ln()));
    }
}
