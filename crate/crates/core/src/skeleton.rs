//! Fixed-shape kinematic skeletons, poses and pose sequences.
//!
//! A skeleton is a joint tree with constant bone offsets. Joint 0 is the root
//! and every other joint's parent has a smaller index, so a single forward
//! sweep visits parents before children.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{project_to_rotation, Rotation};

pub const SKELETON_FORMAT: &str = "skel.v1";

/// Default root depth used when no corpus is available to estimate it.
pub const DEFAULT_ROOT_DEPTH: f64 = 3.0;

const BODY23: &str = include_str!("../data/body23.skel.json");
const HAND21: &str = include_str!("../data/hand21.skel.json");

/// Joint pairs that define the alignment frame: `spine` maps to +Y and
/// `lateral` to the X direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSpec {
    pub spine: [usize; 2],
    pub lateral: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonDef {
    pub name: String,
    pub joint_names: Vec<String>,
    /// `None` for the root.
    pub parents: Vec<Option<usize>>,
    /// Offset of each joint from its parent in the parent's frame; the root's is zero.
    pub offsets: Vec<Vector3<f64>>,
    pub alignment: AlignmentSpec,
}

/// On-disk layout of a skeleton definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub format: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub offsets: Vec<[f64; 3]>,
    pub alignment: AlignmentSpec,
}

impl SkeletonDef {
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<Vector3<f64>>,
        alignment: AlignmentSpec,
    ) -> Result<Self> {
        let skel = SkeletonDef {
            name: name.into(),
            joint_names,
            parents,
            offsets,
            alignment,
        };
        skel.validate()?;
        Ok(skel)
    }

    fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        let bad = |m: String| Err(Error::InvalidSkeleton(m));
        if j < 2 {
            return bad("need at least two joints".into());
        }
        if self.joint_names.len() != j || self.offsets.len() != j {
            return bad(format!(
                "{} names, {} parents, {} offsets",
                self.joint_names.len(),
                j,
                self.offsets.len()
            ));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || self.parents[0].is_some() {
            return bad(format!("exactly one root at index 0 required, found {roots} roots"));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return bad(format!("parent of joint {i} must precede it")),
            }
        }
        let a = &self.alignment;
        if a.spine.iter().chain(&a.lateral).any(|&k| k >= j) {
            return bad("alignment joint out of range".into());
        }
        Ok(())
    }

    /// Builtin skeleton by name: `body23` or `hand21`.
    pub fn builtin(name: &str) -> Result<Arc<SkeletonDef>> {
        let text = match name {
            "body23" => BODY23,
            "hand21" => HAND21,
            other => return Err(Error::InvalidSkeleton(format!("unknown builtin `{other}`"))),
        };
        let file: SkeletonFile = serde_json::from_str(text).expect("builtin skeleton parses");
        Ok(Arc::new(SkeletonDef::from_file(file)?))
    }

    pub fn body23() -> Arc<SkeletonDef> {
        Self::builtin("body23").unwrap()
    }

    pub fn hand21() -> Arc<SkeletonDef> {
        Self::builtin("hand21").unwrap()
    }

    pub fn from_file(file: SkeletonFile) -> Result<Self> {
        if file.format != SKELETON_FORMAT {
            return Err(Error::UnknownFormat(file.format));
        }
        let parents = file
            .parents
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::InvalidSkeleton(format!("bad parent index {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut offsets: Vec<Vector3<f64>> = file.offsets.iter().map(|o| Vector3::from(*o)).collect();
        if let Some(root) = offsets.first_mut() {
            *root = Vector3::zeros();
        }
        SkeletonDef::new(file.name, file.joint_names, parents, offsets, file.alignment)
    }

    pub fn to_file(&self) -> SkeletonFile {
        SkeletonFile {
            format: SKELETON_FORMAT.to_string(),
            name: self.name.clone(),
            note: None,
            joint_names: self.joint_names.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            offsets: self.offsets.iter().map(|o| [o.x, o.y, o.z]).collect(),
            alignment: self.alignment,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        SkeletonDef::from_file(file)
    }

    /// Total joint count `J`, root included.
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// Number of non-root joints `K`; each carries one local rotation.
    pub fn k(&self) -> usize {
        self.parents.len() - 1
    }

    /// Mean length of the canonical (non-root) bones.
    pub fn mean_bone_length(&self) -> f64 {
        self.offsets[1..].iter().map(|o| o.norm()).sum::<f64>() / self.k() as f64
    }

    /// Joint positions of the identity pose with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        forward_kinematics(self, &Pose::identity(self.k(), Vector3::zeros()))
    }
}

/// One frame of articulated pose in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub global_orient: Rotation,
    /// Parent-relative rotation of joints `1..J`, in skeleton order.
    pub joint_rots: Vec<Rotation>,
    /// Root translation in meters.
    pub trans: Vector3<f64>,
}

impl Pose {
    pub fn identity(k: usize, trans: Vector3<f64>) -> Self {
        Pose {
            global_orient: Rotation::identity(),
            joint_rots: vec![Rotation::identity(); k],
            trans,
        }
    }

    /// Global orientation followed by the joint rotations.
    pub fn rotations(&self) -> impl Iterator<Item = &Rotation> {
        std::iter::once(&self.global_orient).chain(self.joint_rots.iter())
    }

    pub fn rotations_mut(&mut self) -> impl Iterator<Item = &mut Rotation> {
        std::iter::once(&mut self.global_orient).chain(self.joint_rots.iter_mut())
    }

    /// Rotation slot `i`: 0 is the global orientation, `i ≥ 1` joint `i`.
    pub fn rotation(&self, i: usize) -> &Rotation {
        if i == 0 {
            &self.global_orient
        } else {
            &self.joint_rots[i - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub skeleton: Arc<SkeletonDef>,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl PoseSequence {
    pub fn new(skeleton: Arc<SkeletonDef>, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if !(fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {fps}")));
        }
        let k = skeleton.k();
        if let Some(f) = frames.iter().find(|f| f.pose.joint_rots.len() != k) {
            return Err(Error::LengthMismatch {
                expected: k,
                got: f.pose.joint_rots.len(),
            });
        }
        Ok(PoseSequence {
            skeleton,
            fps,
            frames,
        })
    }

    /// Builds a fully visible sequence.
    pub fn from_poses(skeleton: Arc<SkeletonDef>, fps: f64, poses: Vec<Pose>) -> Result<Self> {
        let frames = poses
            .into_iter()
            .map(|pose| Frame {
                pose,
                visible: true,
            })
            .collect();
        PoseSequence::new(skeleton, fps, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn visibility(&self) -> Vec<bool> {
        self.frames.iter().map(|f| f.visible).collect()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|f| &f.pose)
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> PoseSequence {
        PoseSequence {
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            frames: self.frames[start..start + len].to_vec(),
        }
    }

    /// FK joint positions for every frame.
    pub fn joint_positions(&self) -> Vec<Vec<Vector3<f64>>> {
        self.poses()
            .map(|p| forward_kinematics(&self.skeleton, p))
            .collect()
    }
}

/// Joint positions (camera frame, meters) for `pose`.
pub fn forward_kinematics(skel: &SkeletonDef, pose: &Pose) -> Vec<Vector3<f64>> {
    let j = skel.num_joints();
    let mut world_rot: Vec<Matrix3<f64>> = Vec::with_capacity(j);
    let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(j);
    world_rot.push(*pose.global_orient.matrix());
    pos.push(pose.trans);
    for i in 1..j {
        let p = skel.parents[i].expect("non-root joint has a parent");
        let parent_rot = world_rot[p];
        pos.push(pos[p] + parent_rot * skel.offsets[i]);
        world_rot.push(parent_rot * pose.joint_rots[i - 1].matrix());
    }
    pos
}

/// Initial pose for the regressor.
///
/// Without a corpus (or with an empty one) this is the identity pose at
/// `(0, 0, 3)`. Otherwise each rotation slot is the chordal mean of the
/// corpus rotations and the translation is the mean translation.
pub fn mean_pose(skel: &SkeletonDef, corpus: &[PoseSequence]) -> Pose {
    let k = skel.k();
    let mut sums = vec![Matrix3::<f64>::zeros(); k + 1];
    let mut trans = Vector3::zeros();
    let mut n = 0usize;
    for pose in corpus.iter().flat_map(|s| s.poses()) {
        for (acc, r) in sums.iter_mut().zip(pose.rotations()) {
            *acc += r.matrix();
        }
        trans += pose.trans;
        n += 1;
    }
    if n == 0 {
        return Pose::identity(k, Vector3::new(0.0, 0.0, DEFAULT_ROOT_DEPTH));
    }
    let mut rots = sums.iter().map(project_to_rotation);
    Pose {
        global_orient: rots.next().unwrap(),
        joint_rots: rots.collect(),
        trans: trans / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{geodesic_distance, random_rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rz(a: f64) -> Rotation {
        Rotation::about_axis(Vector3::z(), a)
    }

    fn two_joint() -> SkeletonDef {
        SkeletonDef::new(
            "bone",
            vec!["root".into(), "tip".into()],
            vec![None, Some(0)],
            vec![Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)],
            AlignmentSpec {
                spine: [0, 1],
                lateral: [0, 1],
            },
        )
        .unwrap()
    }

    fn random_pose(skel: &SkeletonDef, rng: &mut ChaCha8Rng) -> Pose {
        Pose {
            global_orient: random_rotation(rng),
            joint_rots: (0..skel.k()).map(|_| random_rotation(rng)).collect(),
            trans: Vector3::new(0.3, -0.2, 4.0),
        }
    }

    #[test]
    fn builtins_have_expected_sizes() {
        assert_eq!(SkeletonDef::body23().k(), 23);
        assert_eq!(SkeletonDef::hand21().k(), 21);
    }

    #[test]
    fn rejects_bad_trees() {
        let mut f = SkeletonDef::body23().to_file();
        f.parents[3] = 5;
        assert!(SkeletonDef::from_file(f).is_err());
        let mut f = SkeletonDef::body23().to_file();
        f.parents[4] = -1;
        assert!(SkeletonDef::from_file(f).is_err());
        let mut f = SkeletonDef::body23().to_file();
        f.format = "skel.v0".into();
        assert!(matches!(SkeletonDef::from_file(f), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn identity_pose_is_cumulative_offsets() {
        let skel = SkeletonDef::body23();
        let pos = forward_kinematics(&skel, &Pose::identity(23, Vector3::zeros()));
        for i in 1..skel.num_joints() {
            let p = skel.parents[i].unwrap();
            assert!((pos[i] - pos[p] - skel.offsets[i]).norm() < 1e-15);
        }
        let shifted = forward_kinematics(&skel, &Pose::identity(23, Vector3::new(0.0, 0.0, 3.0)));
        for (a, b) in pos.iter().zip(&shifted) {
            assert!((b - a - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn one_bone_chain() {
        let skel = two_joint();
        let trans = Vector3::new(0.5, 0.0, 2.0);
        let pose = Pose {
            global_orient: rz(PI / 2.0),
            joint_rots: vec![Rotation::identity()],
            trans,
        };
        let pos = forward_kinematics(&skel, &pose);
        assert!((pos[1] - (Vector3::new(-1.0, 0.0, 0.0) + trans)).norm() < 1e-12);
    }

    #[test]
    fn fk_preserves_bone_lengths_and_is_equivariant() {
        let skel = SkeletonDef::body23();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pose = random_pose(&skel, &mut rng);
            let pos = forward_kinematics(&skel, &pose);
            for i in 1..skel.num_joints() {
                let p = skel.parents[i].unwrap();
                let len = (pos[i] - pos[p]).norm();
                assert!((len - skel.offsets[i].norm()).abs() < 1e-12);
            }
            let q = random_rotation(&mut rng);
            let mut moved = pose.clone();
            moved.global_orient = q * pose.global_orient;
            moved.trans = q.apply(&pose.trans);
            let pos2 = forward_kinematics(&skel, &moved);
            for (a, b) in pos.iter().zip(&pos2) {
                assert!((q.apply(a) - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn mean_pose_examples() {
        let skel = Arc::new(two_joint());
        let m = mean_pose(&skel, &[]);
        assert_eq!(m, Pose::identity(1, Vector3::new(0.0, 0.0, 3.0)));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&skel, &mut rng);
        let seq = PoseSequence::from_poses(skel.clone(), 30.0, vec![p.clone(); 4]).unwrap();
        let m = mean_pose(&skel, &[seq]);
        assert!(geodesic_distance(&m.global_orient, &p.global_orient) < 1e-9);
        assert!((m.trans - p.trans).norm() < 1e-12);

        let a = Pose::identity(1, Vector3::zeros());
        let mut b = a.clone();
        b.joint_rots[0] = rz(PI / 2.0);
        let seq = PoseSequence::from_poses(skel.clone(), 30.0, vec![a, b]).unwrap();
        let m = mean_pose(&skel, &[seq]);
        assert!(geodesic_distance(&m.joint_rots[0], &rz(PI / 4.0)) < 1e-9);
    }

    #[test]
    fn sequence_validation() {
        let skel = Arc::new(two_joint());
        assert!(matches!(
            PoseSequence::new(skel.clone(), 30.0, vec![]),
            Err(Error::EmptySequence)
        ));
        let frames = vec![Frame {
            pose: Pose::identity(3, Vector3::zeros()),
            visible: true,
        }];
        assert!(matches!(
            PoseSequence::new(skel, 30.0, frames),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
