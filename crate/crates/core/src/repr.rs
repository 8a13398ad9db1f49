//! Per-frame network inputs.
//!
//! Parametric poses become stacked 6D rotations (global orientation first).
//! Keypoint poses are bone-length normalized, root-centered, rotated into a
//! canonical body frame and followed by the 6D form of that frame rotation.
//! Either can be extended with the normalized 2D projection of the joints.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, Pose, SkeletonDef};
use crate::so3::{rotation_to_6d, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputLayout {
    #[serde(rename = "PARAM6D")]
    Param6d,
    #[serde(rename = "KP3D")]
    Kp3d,
    #[serde(rename = "KP3D_2D")]
    Kp3d2d,
    #[serde(rename = "PARAM6D_2D")]
    Param6d2d,
}

impl InputLayout {
    /// Vector length for a skeleton with `num_joints` joints (root included).
    pub fn dim(self, num_joints: usize) -> usize {
        match self {
            InputLayout::Param6d => 6 * num_joints,
            InputLayout::Kp3d => 3 * num_joints + 6,
            InputLayout::Kp3d2d => 5 * num_joints + 6,
            InputLayout::Param6d2d => 8 * num_joints,
        }
    }

    pub fn has_2d(self) -> bool {
        matches!(self, InputLayout::Kp3d2d | InputLayout::Param6d2d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub values: Vec<f64>,
    pub layout: InputLayout,
}

pub fn build_param_input(pose: &Pose) -> InputVector {
    let values = pose
        .rotations()
        .flat_map(|r| rotation_to_6d(r).0)
        .collect();
    InputVector {
        values,
        layout: InputLayout::Param6d,
    }
}

/// Rescales every bone to the skeleton's mean bone length, keeping directions
/// and the root position.
pub fn normalize_bone_lengths(joints: &[Vector3<f64>], skel: &SkeletonDef) -> Result<Vec<Vector3<f64>>> {
    if joints.len() != skel.num_joints() {
        return Err(Error::LengthMismatch {
            expected: skel.num_joints(),
            got: joints.len(),
        });
    }
    let target = skel.mean_bone_length();
    let mut out = Vec::with_capacity(joints.len());
    out.push(joints[0]);
    for i in 1..joints.len() {
        let p = skel.parents[i].expect("non-root joint has a parent");
        let bone = joints[i] - joints[p];
        let len = bone.norm();
        if len < 1e-8 {
            return Err(Error::ZeroLengthBone { joint: i });
        }
        let next = out[p] + bone * (target / len);
        out.push(next);
    }
    Ok(out)
}

/// Rotation whose rows are the body frame axes: applying it sends the spine
/// vector to +Y and the lateral vector into the XY half-plane with x > 0.
pub fn alignment_rotation(joints: &[Vector3<f64>], skel: &SkeletonDef) -> Result<Rotation> {
    let a = &skel.alignment;
    let spine = joints[a.spine[1]] - joints[a.spine[0]];
    let lateral = joints[a.lateral[1]] - joints[a.lateral[0]];
    let (ns, nl) = (spine.norm(), lateral.norm());
    if ns < 1e-12 || nl < 1e-12 {
        return Err(Error::DegenerateFrame);
    }
    let y = spine / ns;
    let l = lateral / nl;
    if y.cross(&l).norm() < 1e-6 {
        return Err(Error::DegenerateFrame);
    }
    let x = (l - y * y.dot(&l)).normalize();
    let z = x.cross(&y);
    Ok(Rotation::from_matrix_unchecked(Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ])))
}

pub fn build_keypoint_input(joints: &[Vector3<f64>], skel: &SkeletonDef) -> Result<InputVector> {
    let normalized = normalize_bone_lengths(joints, skel)?;
    let r = alignment_rotation(&normalized, skel)?;
    let root = normalized[0];
    let mut values = Vec::with_capacity(InputLayout::Kp3d.dim(joints.len()));
    for p in &normalized {
        let q = r.apply(&(p - root));
        values.extend_from_slice(&[q.x, q.y, q.z]);
    }
    values.extend_from_slice(&rotation_to_6d(&r).0);
    Ok(InputVector {
        values,
        layout: InputLayout::Kp3d,
    })
}

/// Flattened normalized 2D projection of the FK joints.
pub fn build_2d_input(pose: &Pose, skel: &SkeletonDef, cam: &CameraIntrinsics) -> Result<Vec<f64>> {
    let joints = forward_kinematics(skel, pose);
    Ok(cam
        .project_to_2d(&joints)?
        .iter()
        .flat_map(|p| [p.x, p.y])
        .collect())
}

/// Builds the input vector for `layout` from a parametric pose. Keypoint
/// layouts use the pose's FK joints as the observed keypoints.
pub fn build_input(
    pose: &Pose,
    skel: &SkeletonDef,
    layout: InputLayout,
    cam: &CameraIntrinsics,
) -> Result<InputVector> {
    let mut v = match layout {
        InputLayout::Param6d | InputLayout::Param6d2d => build_param_input(pose),
        InputLayout::Kp3d | InputLayout::Kp3d2d => {
            build_keypoint_input(&forward_kinematics(skel, pose), skel)?
        }
    };
    if layout.has_2d() {
        v.values.extend(build_2d_input(pose, skel, cam)?);
    }
    v.layout = layout;
    Ok(v)
}
