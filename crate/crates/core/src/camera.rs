//! Fixed pinhole camera at the origin looking down +Z, principal point at the
//! image center. 2D coordinates are normalized so the image center is `(0, 0)`
//! and the image borders sit at `±1`.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest depth (meters) accepted by [`CameraIntrinsics::project_to_2d`].
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub focal: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            focal: 1500.0,
            image_w: 1000.0,
            image_h: 1000.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.image_w > 0.0 && self.image_h > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "camera intrinsics must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Normalized projection of one point; no depth check.
    pub fn project_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let (cx, cy) = (self.image_w * 0.5, self.image_h * 0.5);
        let u = self.focal * p.x / p.z + cx;
        let v = self.focal * p.y / p.z + cy;
        Vector2::new((u - cx) / cx, (v - cy) / cy)
    }

    /// Projects camera-frame points to normalized image coordinates.
    pub fn project_to_2d(&self, points: &[Vector3<f64>]) -> Result<Vec<Vector2<f64>>> {
        points
            .iter()
            .enumerate()
            .map(|(index, p)| {
                if p.z <= MIN_DEPTH {
                    Err(Error::BehindCamera { index, z: p.z })
                } else {
                    Ok(self.project_point(p))
                }
            })
            .collect()
    }

    /// Inverse of the root parameterization `(x2d, y2d, log(1/z))`.
    pub fn unproject_root(&self, x2d: f64, y2d: f64, nearness: f64) -> Vector3<f64> {
        let z = (-nearness).exp();
        let (cx, cy) = (self.image_w * 0.5, self.image_h * 0.5);
        Vector3::new(x2d * cx * z / self.focal, y2d * cy * z / self.focal, z)
    }

    /// Root parameters `(x2d, y2d, nearness)` for a camera-frame translation.
    pub fn root_params(&self, trans: &Vector3<f64>) -> [f64; 3] {
        let p = self.project_point(trans);
        [p.x, p.y, nearness(trans.z)]
    }
}

/// `log(1/z)`.
pub fn nearness(z: f64) -> f64 {
    -z.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        let cam = CameraIntrinsics::default();
        let p = cam.project_to_2d(&[Vector3::new(0.0, 0.0, 4.0)]).unwrap();
        assert_eq!(p[0], Vector2::zeros());
        let z = 2.5;
        let edge = Vector3::new(z * cam.image_w / (2.0 * cam.focal), 0.0, z);
        let p = cam.project_to_2d(&[edge]).unwrap();
        assert!((p[0].x - 1.0).abs() < 1e-15 && p[0].y == 0.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = CameraIntrinsics::default();
        let err = cam
            .project_to_2d(&[Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1e-3)])
            .unwrap_err();
        assert!(matches!(err, Error::BehindCamera { index: 1, .. }));
    }

    #[test]
    fn unproject_examples() {
        let cam = CameraIntrinsics::default();
        assert_eq!(cam.unproject_root(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0));
        let g = cam.unproject_root(0.0, 0.0, (1.0f64 / 3.0).ln());
        assert!((g - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-15);
    }

    #[test]
    fn root_parameters_round_trip() {
        let cam = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let z = rng.random_range(0.3..20.0);
            let g = Vector3::new(rng.random_range(-1.0..1.0) * z, rng.random_range(-1.0..1.0) * z, z);
            let [x, y, n] = cam.root_params(&g);
            let back = cam.unproject_root(x, y, n);
            assert!((back - g).norm() < 1e-9, "{g} -> {back}");
        }
    }
}
