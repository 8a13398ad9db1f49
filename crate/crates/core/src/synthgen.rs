//! Procedural motion corpus: every rotation slot follows its own random
//! keyframe schedule, keyframes deviate from a base pose by a bounded
//! axis-angle offset, and frames in between are slerped. The root moves
//! through random waypoints with smoothstep easing.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, Pose, PoseSequence, SkeletonDef};
use crate::so3::{axisangle_to_rotation, slerp, AxisAngle, Rotation};

/// Attempts before a sequence that leaves the camera view is accepted anyway.
const MAX_ATTEMPTS: usize = 200;

/// Axis-aligned box (camera frame, meters) the root waypoints are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Frustum {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        Vector3::new(uniform(rng, self.x), uniform(rng, self.y), uniform(rng, self.z))
    }

    fn clamp(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p.x.clamp(self.x[0], self.x[1]),
            p.y.clamp(self.y[0], self.y[1]),
            p.z.clamp(self.z[0], self.z[1]),
        )
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        inside(p.x, self.x) && inside(p.y, self.y) && inside(p.z, self.z)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    /// Builtin skeleton name or path to a skeleton file.
    pub skeleton: String,
    pub fps: f64,
    pub num_sequences: usize,
    /// Inclusive range of sequence lengths, in frames.
    pub duration: [usize; 2],
    /// Inclusive range of gaps between keyframes, in frames.
    pub keyframe_interval: [usize; 2],
    /// Largest keyframe deviation of a joint rotation from the base pose (rad).
    pub max_deviation: f64,
    /// Largest keyframe deviation of the global orientation (rad).
    pub root_deviation: f64,
    /// Base global orientation as an axis-angle vector.
    pub base_orient: [f64; 3],
    /// Largest per-axis step between consecutive root waypoints (m).
    pub trans_amplitude: f64,
    pub frustum: Frustum,
    pub camera: CameraIntrinsics,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec::body()
    }
}

impl GenSpec {
    /// Full bodies standing 5 to 9 m in front of the camera, upright in the image.
    pub fn body() -> Self {
        GenSpec {
            skeleton: "body23".into(),
            fps: 30.0,
            num_sequences: 100,
            duration: [64, 256],
            keyframe_interval: [10, 30],
            max_deviation: 0.6,
            root_deviation: 0.4,
            base_orient: [PI, 0.0, 0.0],
            trans_amplitude: 0.3,
            frustum: Frustum {
                x: [-0.3, 0.3],
                y: [-0.3, 0.3],
                z: [5.0, 9.0],
            },
            camera: CameraIntrinsics::default(),
            seed: 0,
        }
    }

    /// Hands half a meter from the camera.
    pub fn hand() -> Self {
        GenSpec {
            skeleton: "hand21".into(),
            max_deviation: 0.5,
            trans_amplitude: 0.03,
            frustum: Frustum {
                x: [-0.03, 0.03],
                y: [-0.03, 0.03],
                z: [0.5, 0.8],
            },
            ..GenSpec::body()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |r: [usize; 2]| r[0] >= 1 && r[0] <= r[1];
        let box_ok = |r: [f64; 2]| r[0] <= r[1];
        if !(self.fps > 0.0) || !range(self.duration) || !range(self.keyframe_interval) {
            return Err(Error::InvalidConfig("fps, duration and keyframe_interval must be positive ranges".into()));
        }
        if !(0.0..PI / 2.0).contains(&self.max_deviation) || !(0.0..PI / 2.0).contains(&self.root_deviation) {
            return Err(Error::InvalidConfig("keyframe deviations must lie in [0, π/2)".into()));
        }
        if !(self.trans_amplitude >= 0.0)
            || !box_ok(self.frustum.x)
            || !box_ok(self.frustum.y)
            || !box_ok(self.frustum.z)
            || self.frustum.z[0] <= MIN_DEPTH
        {
            return Err(Error::InvalidConfig("invalid frustum or translation amplitude".into()));
        }
        self.camera.validate()
    }

    pub fn resolve_skeleton(&self) -> Result<Arc<SkeletonDef>> {
        SkeletonDef::builtin(&self.skeleton)
            .or_else(|_| SkeletonDef::load(std::path::Path::new(&self.skeleton)).map(Arc::new))
    }

    /// Upper bound on the per-frame geodesic speed of any joint rotation.
    pub fn max_angular_speed(&self) -> f64 {
        2.0 * self.max_deviation.max(self.root_deviation) / self.keyframe_interval[0] as f64
    }
}

/// Uniform direction, magnitude uniform in `[0, bound]`.
fn bounded_axis_angle<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> AxisAngle {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    let mag = rng.random_range(0.0..=1.0) * bound;
    AxisAngle(Vector3::new(s * phi.cos(), s * phi.sin(), z) * mag)
}

fn keyframe_times<R: Rng + ?Sized>(rng: &mut R, frames: usize, gap: [usize; 2]) -> Vec<usize> {
    let mut times = vec![0];
    while times.len() < 2 || *times.last().unwrap() < frames - 1 {
        let step = rng.random_range(gap[0]..=gap[1]);
        times.push(times.last().unwrap() + step);
    }
    times
}

/// Slerps keyframe rotations over `frames` frames.
fn rotation_track<R: Rng + ?Sized>(rng: &mut R, spec: &GenSpec, frames: usize, base: &Rotation, bound: f64) -> Vec<Rotation> {
    let times = keyframe_times(rng, frames, spec.keyframe_interval);
    let keys: Vec<Rotation> = times
        .iter()
        .map(|_| *base * axisangle_to_rotation(bounded_axis_angle(rng, bound)))
        .collect();
    let mut out = Vec::with_capacity(frames);
    let mut seg = 0;
    for t in 0..frames {
        while times[seg + 1] < t {
            seg += 1;
        }
        let (t0, t1) = (times[seg], times[seg + 1]);
        let u = (t - t0) as f64 / (t1 - t0) as f64;
        out.push(slerp(&keys[seg], &keys[seg + 1], u).expect("keyframes closer than π"));
    }
    out
}

fn translation_track<R: Rng + ?Sized>(rng: &mut R, spec: &GenSpec, frames: usize) -> Vec<Vector3<f64>> {
    let times = keyframe_times(rng, frames, spec.keyframe_interval);
    let a = spec.trans_amplitude;
    let mut points = vec![spec.frustum.sample(rng)];
    for _ in 1..times.len() {
        let step = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ) * a;
        points.push(spec.frustum.clamp(points.last().unwrap() + step));
    }
    let mut seg = 0;
    (0..frames)
        .map(|t| {
            while times[seg + 1] < t {
                seg += 1;
            }
            let u = (t - times[seg]) as f64 / (times[seg + 1] - times[seg]) as f64;
            let s = u * u * (3.0 - 2.0 * u);
            spec.frustum.clamp(points[seg] * (1.0 - s) + points[seg + 1] * s)
        })
        .collect()
}

/// True when every joint of every frame is in front of the camera and
/// projects inside the image.
pub fn in_view(seq: &PoseSequence, cam: &CameraIntrinsics) -> bool {
    seq.poses().all(|p| {
        forward_kinematics(&seq.skeleton, p).iter().all(|j| {
            if j.z <= MIN_DEPTH {
                return false;
            }
            let q = cam.project_point(j);
            q.x.abs() <= 1.0 && q.y.abs() <= 1.0
        })
    })
}

fn generate_once<R: Rng + ?Sized>(spec: &GenSpec, skel: &Arc<SkeletonDef>, rng: &mut R) -> Result<PoseSequence> {
    let frames = rng.random_range(spec.duration[0]..=spec.duration[1]);
    let base = axisangle_to_rotation(AxisAngle(Vector3::from(spec.base_orient)));
    let root = rotation_track(rng, spec, frames, &base, spec.root_deviation);
    let joints: Vec<Vec<Rotation>> = (0..skel.k())
        .map(|_| rotation_track(rng, spec, frames, &Rotation::identity(), spec.max_deviation))
        .collect();
    let trans = translation_track(rng, spec, frames);
    let poses = (0..frames)
        .map(|t| Pose {
            global_orient: root[t],
            joint_rots: joints.iter().map(|j| j[t]).collect(),
            trans: trans[t],
        })
        .collect();
    PoseSequence::from_poses(skel.clone(), spec.fps, poses)
}

/// One fully visible synthetic sequence. Draws that leave the camera view are
/// rejected and redrawn.
pub fn generate_sequence<R: Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> Result<PoseSequence> {
    spec.validate()?;
    let skel = spec.resolve_skeleton()?;
    let mut seq = generate_once(spec, &skel, rng)?;
    for _ in 1..MAX_ATTEMPTS {
        if in_view(&seq, &spec.camera) {
            break;
        }
        seq = generate_once(spec, &skel, rng)?;
    }
    Ok(seq)
}

/// Indices into a corpus, disjoint and covering it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<PoseSequence>,
    pub split: Split,
}

impl Corpus {
    pub fn train(&self) -> Vec<PoseSequence> {
        self.pick(&self.split.train)
    }
    pub fn val(&self) -> Vec<PoseSequence> {
        self.pick(&self.split.val)
    }
    pub fn test(&self) -> Vec<PoseSequence> {
        self.pick(&self.split.test)
    }
    fn pick(&self, idx: &[usize]) -> Vec<PoseSequence> {
        idx.iter().map(|&i| self.sequences[i].clone()).collect()
    }
}

/// 80/10/10 split of `n` items in random order; validation and test get at
/// least one item each.
pub fn split_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64 * 0.1).round() as usize).max(1);
    let test = idx.split_off(n - held);
    let val = idx.split_off(n - 2 * held);
    Split { train: idx, val, test }
}

/// Generates `n ≥ 10` sequences in parallel. Sequence `i` uses its own
/// stream of a generator seeded from `rng`, so the result does not depend on
/// the thread count.
pub fn generate_corpus<R: Rng + ?Sized>(spec: &GenSpec, n: usize, rng: &mut R) -> Result<Corpus> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!("a corpus needs at least 10 sequences, got {n}")));
    }
    spec.validate()?;
    let base: u64 = rng.random();
    let sequences = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(i as u64);
            generate_sequence(spec, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = split_indices(n, rng);
    Ok(Corpus { sequences, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::geodesic_distance;

    fn short() -> GenSpec {
        GenSpec {
            duration: [20, 40],
            ..GenSpec::body()
        }
    }

    #[test]
    fn zero_deviation_gives_constant_pose() {
        let spec = GenSpec {
            max_deviation: 0.0,
            root_deviation: 0.0,
            trans_amplitude: 0.0,
            ..short()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = generate_sequence(&spec, &mut rng).unwrap();
        let first = &seq.frames[0].pose;
        for p in seq.poses() {
            for (a, b) in p.rotations().zip(first.rotations()) {
                assert!(geodesic_distance(a, b) < 1e-12);
            }
            assert!(p.joint_rots.iter().all(|r| geodesic_distance(r, &Rotation::identity()) < 1e-12));
            assert!((p.trans - first.trans).norm() < 1e-12);
        }
        assert!(seq.frames.iter().all(|f| f.visible));
    }

    #[test]
    fn angular_speed_is_bounded() {
        let spec = short();
        let bound = spec.max_angular_speed();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut top: f64 = 0.0;
        for _ in 0..1000 {
            let seq = generate_sequence(&spec, &mut rng).unwrap();
            for w in seq.frames.windows(2) {
                for (a, b) in w[0].pose.rotations().zip(w[1].pose.rotations()) {
                    top = top.max(geodesic_distance(a, b));
                }
            }
        }
        assert!(top <= bound * (1.0 + 1e-9), "{top} > {bound}");
        assert!(top > 0.3 * bound);
    }

    #[test]
    fn joints_stay_in_view() {
        for spec in [short(), GenSpec { duration: [20, 40], ..GenSpec::hand() }] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..50 {
                let seq = generate_sequence(&spec, &mut rng).unwrap();
                assert!(in_view(&seq, &spec.camera));
                assert!(seq.poses().all(|p| spec.frustum.contains(&p.trans)));
                assert!(seq.poses().all(|p| p.rotations().all(|r| r.is_valid(1e-9))));
            }
        }
    }

    #[test]
    fn corpus_split_and_determinism() {
        let spec = short();
        let c = generate_corpus(&spec, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!((c.split.train.len(), c.split.val.len(), c.split.test.len()), (8, 1, 1));
        let mut all: Vec<usize> = c.split.train.iter().chain(&c.split.val).chain(&c.split.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let d = generate_corpus(&spec, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(c, d);
        let e = generate_corpus(&spec, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_ne!(c.sequences, e.sequences);
        assert!(generate_corpus(&spec, 9, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn durations_cover_the_range() {
        let spec = GenSpec {
            duration: [20, 24],
            ..GenSpec::body()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 5];
        let draws = 1000;
        for _ in 0..draws {
            let n = generate_sequence(&spec, &mut rng).unwrap().len();
            assert!((20..=24).contains(&n));
            counts[n - 20] += 1;
        }
        // each length has probability 1/5; allow 4 binomial standard deviations
        let sd = (draws as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - 200.0).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = split_indices(2000, &mut rng);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1600, 200, 200));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = GenSpec::body();
        spec.duration = [0, 10];
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::body();
        spec.max_deviation = 2.0;
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::body();
        spec.skeleton = "no-such-skeleton".into();
        assert!(generate_sequence(&spec, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
