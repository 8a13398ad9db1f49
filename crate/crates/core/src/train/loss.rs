//! Reconstruction loss: squared Frobenius distance between orthonormalized
//! predicted rotations and ground-truth rotations, plus squared distance
//! between camera-frame root translations, summed over every frame.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Scalar};
use crate::skeleton::Pose;
use crate::so3::{gram_schmidt_columns, gram_schmidt_vjp, Rotation, GS_MIN_NORM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pose: f64,
    pub trans: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pose: 1.0, trans: 1.0 }
    }
}

/// Weighted total and its unweighted components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub pose: f64,
    pub trans: f64,
}

impl LossParts {
    fn new(pose: f64, trans: f64, w: LossWeights) -> Self {
        LossParts {
            total: w.pose * pose + w.trans * trans,
            pose,
            trans,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.pose.is_finite() && self.trans.is_finite()
    }
}

fn frobenius_sq(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).norm_squared()
}

/// Loss between two pose tracks of equal length.
pub fn pose_loss(pred: &[Pose], target: &[Pose], w: LossWeights) -> Result<LossParts> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    let mut pose = 0.0;
    let mut trans = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.joint_rots.len() != t.joint_rots.len() {
            return Err(Error::LengthMismatch {
                expected: t.joint_rots.len(),
                got: p.joint_rots.len(),
            });
        }
        pose += p.rotations().zip(t.rotations()).map(|(a, b)| frobenius_sq(a, b)).sum::<f64>();
        trans += (p.trans - t.trans).norm_squared();
    }
    Ok(LossParts::new(pose, trans, w))
}

/// Per-token targets in the layout the network state decodes to: rotation
/// matrices column-major, then the root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTargets {
    pub rotations: Array2<f64>,
    pub translations: Array2<f64>,
}

impl StateTargets {
    pub fn new(poses: &[Pose]) -> Self {
        let slots = poses.first().map_or(0, |p| p.joint_rots.len() + 1);
        let mut rotations = Array2::zeros((poses.len(), 9 * slots));
        let mut translations = Array2::zeros((poses.len(), 3));
        for (i, p) in poses.iter().enumerate() {
            for (j, r) in p.rotations().enumerate() {
                for (c, v) in r.matrix().as_slice().iter().enumerate() {
                    rotations[[i, 9 * j + c]] = *v;
                }
            }
            for c in 0..3 {
                translations[[i, c]] = p.trans[c];
            }
        }
        StateTargets { rotations, translations }
    }

    pub fn rows(&self) -> usize {
        self.rotations.nrows()
    }
}

/// Loss of a batch of network states against `targets` (summed over frames,
/// averaged over the `batch` sequences) and its gradient with respect to the
/// state.
pub fn state_loss<F: Scalar>(
    cfg: &ModelConfig,
    state: &ArrayView2<F>,
    targets: &StateTargets,
    batch: usize,
    w: LossWeights,
) -> Result<(LossParts, Array2<F>)> {
    let slots = cfg.num_joints + 1;
    if state.nrows() != targets.rows() || state.ncols() != cfg.state_dim() || targets.rotations.ncols() != 9 * slots {
        return Err(Error::ShapeMismatch(format!(
            "state {:?} vs targets {:?}",
            state.shape(),
            targets.rotations.shape()
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let rot_dim = cfg.rot_dim();
    let cam = &cfg.camera;
    let (cx, cy) = (cam.image_w * 0.5, cam.image_h * 0.5);
    let mut grad = Array2::zeros(state.raw_dim());
    let mut pose = 0.0;
    let mut trans = 0.0;
    for (i, (row, mut g)) in state.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        for j in 0..slots {
            let v: [f64; 6] = std::array::from_fn(|c| row[6 * j + c].to_f64().unwrap());
            let m = gram_schmidt_columns(&v, GS_MIN_NORM).ok_or(Error::DegenerateInput("predicted 6D rotation"))?;
            let mut dm = [0.0; 9];
            for c in 0..9 {
                let d = m[c] - targets.rotations[[i, 9 * j + c]];
                pose += d * d;
                dm[c] = 2.0 * w.pose * inv_b * d;
            }
            let dv = gram_schmidt_vjp(&v, &dm);
            for c in 0..6 {
                g[6 * j + c] = F::from_f64(dv[c]).unwrap();
            }
        }
        if cfg.translation_head {
            let t = |c: usize| row[rot_dim + c].to_f64().unwrap();
            let gamma = cam.unproject_root(t(0), t(1), t(2));
            let d: [f64; 3] = std::array::from_fn(|c| gamma[c] - targets.translations[[i, c]]);
            trans += d.iter().map(|x| x * x).sum::<f64>();
            let s = 2.0 * w.trans * inv_b;
            let z = gamma.z;
            g[rot_dim] = F::from_f64(s * d[0] * cx * z / cam.focal).unwrap();
            g[rot_dim + 1] = F::from_f64(s * d[1] * cy * z / cam.focal).unwrap();
            // every component of the unprojected root scales with z = exp(−n)
            g[rot_dim + 2] = F::from_f64(-s * (d[0] * gamma.x + d[1] * gamma.y + d[2] * gamma.z)).unwrap();
        } else {
            let t0 = crate::model::default_translation();
            trans += (0..3).map(|c| (t0[c] - targets.translations[[i, c]]).powi(2)).sum::<f64>();
        }
    }
    Ok((LossParts::new(pose * inv_b, trans * inv_b, w), grad))
}
