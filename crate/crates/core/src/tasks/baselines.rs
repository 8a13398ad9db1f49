//! Classical baselines. Filters treat every 6D rotation component and every
//! translation coordinate as an independent signal over time and re-project
//! the filtered rotations onto SO(3).

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{Frame, Pose, PoseSequence};
use crate::so3::{axisangle_to_rotation, gram_schmidt, rotation_to_6d, rotation_to_axisangle, AxisAngle, Rot6D};

pub const SAVGOL_WINDOW: usize = 11;
pub const SAVGOL_ORDER: usize = 3;
pub const MEDIAN_WINDOW: usize = 9;

/// Hidden frames copy the temporally nearest visible frame; ties go to the
/// earlier one. The output is fully visible.
pub fn baseline_nearest_fill(seq: &PoseSequence) -> Result<PoseSequence> {
    let vis: Vec<usize> = (0..seq.len()).filter(|&t| seq.frames[t].visible).collect();
    if vis.is_empty() {
        return Err(Error::AllMasked { start: 0 });
    }
    let mut k = 0;
    let frames = (0..seq.len())
        .map(|t| {
            while k + 1 < vis.len() && vis[k + 1] <= t {
                k += 1;
            }
            let src = if vis[k] >= t || k + 1 == vis.len() {
                vis[k]
            } else if t - vis[k] <= vis[k + 1] - t {
                vis[k]
            } else {
                vis[k + 1]
            };
            Frame {
                pose: seq.frames[src].pose.clone(),
                visible: true,
            }
        })
        .collect();
    PoseSequence::new(seq.skeleton.clone(), seq.fps, frames)
}

fn to_signals(seq: &PoseSequence) -> Vec<Vec<f64>> {
    seq.poses()
        .map(|p| {
            let mut v: Vec<f64> = p.rotations().flat_map(|r| rotation_to_6d(r).0).collect();
            v.extend(p.trans.iter());
            v
        })
        .collect()
}

fn from_signals(seq: &PoseSequence, signals: &[Vec<f64>]) -> Result<PoseSequence> {
    let slots = seq.skeleton.k() + 1;
    let poses = signals
        .iter()
        .map(|v| {
            let mut rots = (0..slots)
                .map(|j| gram_schmidt(&Rot6D(std::array::from_fn(|c| v[6 * j + c]))))
                .collect::<Result<Vec<_>>>()?;
            let global_orient = rots.remove(0);
            let o = 6 * slots;
            Ok(Pose {
                global_orient,
                joint_rots: rots,
                trans: Vector3::new(v[o], v[o + 1], v[o + 2]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PoseSequence::from_poses(seq.skeleton.clone(), seq.fps, poses)
}

/// Weights of the centered least-squares polynomial fit of degree `order`
/// over offsets `-half..=half`.
pub fn savgol_coefficients(half: usize, order: usize) -> Vec<f64> {
    let n = 2 * half + 1;
    let order = order.min(n - 1);
    let a = DMatrix::from_fn(n, order + 1, |r, c| (r as f64 - half as f64).powi(c as i32));
    let ata = a.transpose() * &a;
    let inv = ata.try_inverse().expect("Vandermonde normal matrix is invertible");
    let w = inv * a.transpose();
    w.row(0).iter().copied().collect()
}

/// Savitzky-Golay smoothing over the nearest-filled sequence. Near the ends
/// the window shrinks symmetrically and the order drops to fit it.
pub fn baseline_savgol(seq: &PoseSequence, window: usize, polyorder: usize) -> Result<PoseSequence> {
    if seq.len() < 3 || window < 3 || window % 2 == 0 || polyorder >= window {
        return Err(Error::WindowTooLarge { len: seq.len() });
    }
    let filled = baseline_nearest_fill(seq)?;
    let x = to_signals(&filled);
    let n = x.len();
    let half = window / 2;
    let mut coeffs: Vec<Vec<f64>> = (0..=half).map(|h| savgol_coefficients(h, polyorder.min(2 * h))).collect();
    coeffs[0] = vec![1.0];
    let y: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let h = half.min(t).min(n - 1 - t);
            let c = &coeffs[h];
            (0..x[t].len())
                .map(|d| c.iter().enumerate().map(|(k, w)| w * x[t + k - h][d]).sum())
                .collect()
        })
        .collect();
    from_signals(seq, &y)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sliding per-signal median over the nearest-filled sequence; the window is
/// truncated at the ends.
pub fn baseline_median(seq: &PoseSequence, window: usize) -> Result<PoseSequence> {
    if window == 0 {
        return Err(Error::WindowTooLarge { len: seq.len() });
    }
    let filled = baseline_nearest_fill(seq)?;
    let x = to_signals(&filled);
    let n = x.len();
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    let y: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let (lo, hi) = (t.saturating_sub(half), (t + half).min(n - 1));
            (0..x[t].len())
                .map(|d| {
                    buf.clear();
                    buf.extend((lo..=hi).map(|s| x[s][d]));
                    median(&mut buf)
                })
                .collect()
        })
        .collect();
    from_signals(seq, &y)
}

/// Repeats the last observed pose.
pub fn baseline_no_velocity(observed: &[Pose], horizon: usize) -> Result<Vec<Pose>> {
    let last = observed.last().ok_or(Error::TooFewObserved { needed: 1, got: 0 })?;
    Ok(vec![last.clone(); horizon])
}

/// Continues the last per-joint relative rotation `R_T · R_{T−1}ᵀ` and the
/// last root velocity.
pub fn baseline_velocity_propagation(observed: &[Pose], horizon: usize) -> Result<Vec<Pose>> {
    let n = observed.len();
    if n < 2 {
        return Err(Error::TooFewObserved { needed: 2, got: n });
    }
    let (prev, last) = (&observed[n - 2], &observed[n - 1]);
    let logs: Vec<Vector3<f64>> = last
        .rotations()
        .zip(prev.rotations())
        .map(|(a, b)| rotation_to_axisangle(&(*a * b.transpose())).0)
        .collect();
    let vel = last.trans - prev.trans;
    Ok((1..=horizon)
        .map(|k| {
            let kf = k as f64;
            let mut rots = last
                .rotations()
                .zip(&logs)
                .map(|(r, w)| axisangle_to_rotation(AxisAngle(w * kf)) * *r);
            let global_orient = rots.next().unwrap();
            Pose {
                global_orient,
                joint_rots: rots.collect(),
                trans: last.trans + vel * kf,
            }
        })
        .collect())
}
