//! Training-time degradation of clean windows.
//!
//! The pipeline order is fixed: visibility mask, Gaussian axis-angle noise,
//! replacement of whole frames by frames of other sequences in the batch, and
//! replacement of individual joint rotations by uniformly random rotations.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::PoseSequence;
use crate::so3::{axisangle_to_rotation, random_rotation, rotation_to_axisangle, AxisAngle, Rotation};

/// Fraction of frames to hide, fixed or drawn uniformly once per batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskRatio {
    Fixed(f64),
    Range([f64; 2]),
}

impl MaskRatio {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MaskRatio::Fixed(r) => r,
            MaskRatio::Range([lo, hi]) if hi > lo => rng.random_range(lo..=hi),
            MaskRatio::Range([lo, _]) => lo,
        }
    }
}

/// Axis-angle noise standard deviation, fixed or picked once per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseLevel {
    Fixed(f64),
    Choice(Vec<f64>),
}

impl NoiseLevel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseLevel::Fixed(s) => *s,
            NoiseLevel::Choice(v) if v.is_empty() => 0.0,
            NoiseLevel::Choice(v) => v[rng.random_range(0..v.len())],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            NoiseLevel::Fixed(s) => vec![*s],
            NoiseLevel::Choice(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub mask_ratio: MaskRatio,
    /// Probability that the hidden frames form contiguous blocks.
    pub block_mask_prob: f64,
    /// Longest block in frames; `None` means a quarter of the window.
    pub max_block_len: Option<usize>,
    /// Probability that the hidden frames are the trailing ones (forecasting).
    pub tail_mask_prob: f64,
    /// Axis-angle noise σ in radians, per component.
    pub gauss_sigma: NoiseLevel,
    pub random_pose_frac: f64,
    pub random_joint_frac: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec::body()
    }
}

impl CorruptionSpec {
    /// Body recipe: 12.5% masking and σ = 0.05 axis-angle noise.
    pub fn body() -> Self {
        CorruptionSpec {
            mask_ratio: MaskRatio::Fixed(0.125),
            block_mask_prob: 0.5,
            max_block_len: None,
            tail_mask_prob: 0.0,
            gauss_sigma: NoiseLevel::Fixed(0.05),
            random_pose_frac: 0.0,
            random_joint_frac: 0.0,
            seed: 0,
        }
    }

    /// Hand recipe: 25% masking, σ alternating between 1e-2 and 1e-3, 25%
    /// random poses. Meant for 76-frame windows.
    pub fn hand() -> Self {
        CorruptionSpec {
            mask_ratio: MaskRatio::Fixed(0.25),
            gauss_sigma: NoiseLevel::Choice(vec![1e-2, 1e-3]),
            random_pose_frac: 0.25,
            ..CorruptionSpec::body()
        }
    }

    /// No corruption at all.
    pub fn clean() -> Self {
        CorruptionSpec {
            mask_ratio: MaskRatio::Fixed(0.0),
            gauss_sigma: NoiseLevel::Fixed(0.0),
            ..CorruptionSpec::body()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ratios_ok = match self.mask_ratio {
            MaskRatio::Fixed(r) => unit(r),
            MaskRatio::Range([lo, hi]) => unit(lo) && unit(hi) && lo <= hi,
        };
        if !ratios_ok
            || !unit(self.block_mask_prob)
            || !unit(self.tail_mask_prob)
            || !unit(self.random_pose_frac)
            || !unit(self.random_joint_frac)
        {
            return Err(Error::InvalidConfig("corruption fractions must lie in [0, 1]".into()));
        }
        if self.gauss_sigma.values().iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("gauss_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Visibility mask (true = visible) hiding `round(ratio · len)` frames, at
/// most `len − 1`.
pub fn sample_mask_with_ratio<R: Rng + ?Sized>(len: usize, ratio: f64, spec: &CorruptionSpec, rng: &mut R) -> Vec<bool> {
    let mut visible = vec![true; len];
    if len == 0 {
        return visible;
    }
    let count = ((ratio * len as f64).round() as usize).min(len - 1);
    if count == 0 {
        return visible;
    }
    let mode: f64 = rng.random();
    if mode < spec.tail_mask_prob {
        visible[len - count..].fill(false);
        return visible;
    }
    let block: f64 = rng.random();
    if block < spec.block_mask_prob {
        let max_block = spec.max_block_len.unwrap_or(len / 4).max(1);
        place_blocks(&mut visible, count, max_block, rng);
    } else {
        for i in sample(rng, len, count) {
            visible[i] = false;
        }
    }
    visible
}

/// Draws the batch ratio from `spec` and samples one mask.
pub fn sample_mask<R: Rng + ?Sized>(len: usize, spec: &CorruptionSpec, rng: &mut R) -> Vec<bool> {
    let ratio = spec.mask_ratio.sample(rng);
    sample_mask_with_ratio(len, ratio, spec, rng)
}

/// Hides `count` frames as runs of at most `max_block` frames at uniform
/// starts, with a visible frame between runs so they never merge; frames
/// that cannot be placed as runs are hidden individually.
fn place_blocks<R: Rng + ?Sized>(visible: &mut [bool], count: usize, max_block: usize, rng: &mut R) {
    let len = visible.len();
    let mut remaining = count;
    let mut attempts = 0;
    while remaining > 0 && attempts < 64 {
        let run = remaining.min(max_block);
        let start = rng.random_range(0..=len - run);
        let lo = start.saturating_sub(1);
        let hi = (start + run + 1).min(len);
        if visible[lo..hi].iter().all(|&v| v) {
            visible[start..start + run].fill(false);
            remaining -= run;
        } else {
            attempts += 1;
        }
    }
    if remaining > 0 {
        let free: Vec<usize> = (0..len).filter(|&i| visible[i]).collect();
        for i in sample(rng, free.len(), remaining) {
            visible[free[i]] = false;
        }
    }
}

fn perturb<R: Rng + ?Sized>(r: &Rotation, normal: &Normal<f64>, rng: &mut R) -> Rotation {
    let mut a = rotation_to_axisangle(r);
    for c in a.0.iter_mut() {
        *c += normal.sample(rng);
    }
    axisangle_to_rotation(AxisAngle(a.0))
}

/// Adds `N(0, σ²I)` to the axis-angle vector of every rotation.
pub fn add_gaussian_noise<R: Rng + ?Sized>(seq: &PoseSequence, sigma: f64, rng: &mut R) -> PoseSequence {
    let mut out = seq.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for frame in &mut out.frames {
        for r in frame.pose.rotations_mut() {
            *r = perturb(r, &normal, rng);
        }
    }
    out
}

/// Replaces `round(frac · visible)` visible frames of each sequence with a
/// uniformly chosen frame of another sequence in the batch.
pub fn replace_random_poses<R: Rng + ?Sized>(batch: &[PoseSequence], frac: f64, rng: &mut R) -> Result<Vec<PoseSequence>> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall);
    }
    let mut out = batch.to_vec();
    if frac <= 0.0 {
        return Ok(out);
    }
    for (i, seq) in out.iter_mut().enumerate() {
        let vis: Vec<usize> = (0..seq.len()).filter(|&t| seq.frames[t].visible).collect();
        let count = (frac * vis.len() as f64).round() as usize;
        for k in sample(rng, vis.len(), count.min(vis.len())) {
            let mut j = rng.random_range(0..batch.len() - 1);
            if j >= i {
                j += 1;
            }
            let src = &batch[j];
            let t = rng.random_range(0..src.len());
            seq.frames[vis[k]].pose = src.frames[t].pose.clone();
        }
    }
    Ok(out)
}

/// In every visible frame, gives `round(frac · K)` random joints a uniformly
/// random rotation.
pub fn replace_random_joints<R: Rng + ?Sized>(seq: &PoseSequence, frac: f64, rng: &mut R) -> PoseSequence {
    let mut out = seq.clone();
    let k = seq.skeleton.k();
    let count = ((frac * k as f64).round() as usize).min(k);
    if count == 0 {
        return out;
    }
    for frame in out.frames.iter_mut().filter(|f| f.visible) {
        for j in sample(rng, k, count) {
            frame.pose.joint_rots[j] = random_rotation(rng);
        }
    }
    out
}

/// Applies the full pipeline to a batch of clean windows.
pub fn corrupt_batch<R: Rng + ?Sized>(batch: &[PoseSequence], spec: &CorruptionSpec, rng: &mut R) -> Result<Vec<PoseSequence>> {
    let ratio = spec.mask_ratio.sample(rng);
    let sigma = spec.gauss_sigma.sample(rng);
    let mut out: Vec<PoseSequence> = batch
        .iter()
        .map(|seq| {
            let mut s = seq.clone();
            let mask = sample_mask_with_ratio(s.len(), ratio, spec, rng);
            for (f, v) in s.frames.iter_mut().zip(mask) {
                f.visible = v;
            }
            s
        })
        .collect();
    out = out.iter().map(|s| add_gaussian_noise(s, sigma, rng)).collect();
    if spec.random_pose_frac > 0.0 {
        out = replace_random_poses(&out, spec.random_pose_frac, rng)?;
    }
    if spec.random_joint_frac > 0.0 {
        out = out
            .iter()
            .map(|s| replace_random_joints(s, spec.random_joint_frac, rng))
            .collect();
    }
    Ok(out)
}
