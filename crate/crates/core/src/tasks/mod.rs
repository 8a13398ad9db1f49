//! Inference drivers (refinement, completion, forecasting) and the classical
//! baselines they are compared against.

mod baselines;
mod study;

use serde::{Deserialize, Serialize};

pub use baselines::{
    baseline_median, baseline_nearest_fill, baseline_no_velocity, baseline_savgol, baseline_velocity_propagation,
    savgol_coefficients, MEDIAN_WINDOW, SAVGOL_ORDER, SAVGOL_WINDOW,
};
pub use study::{drop_mask, frame_drop_study, gains_csv, DropGain, StudyResult};

use crate::error::{Error, Result};
use crate::model::PoseBert;
use crate::skeleton::{Frame, Pose, PoseSequence};

/// Windows fed to the network per forward call.
const WINDOWS_PER_CALL: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Refine,
    Complete,
    Future,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub task: Task,
    /// Frames to forecast (future only).
    pub horizon: usize,
    /// Leading frames treated as observations (future only).
    pub observed: usize,
}

impl TaskRequest {
    pub fn run(&self, seq: &PoseSequence, model: &PoseBert<f32>) -> Result<PoseSequence> {
        match self.task {
            Task::Refine => refine(seq, model),
            Task::Complete => complete(seq, model),
            Task::Future => {
                if self.observed > seq.len() {
                    return Err(Error::TooFewObserved {
                        needed: self.observed,
                        got: seq.len(),
                    });
                }
                let obs = seq.window(0, self.observed);
                let poses = predict_future(&obs, self.horizon, model)?;
                if poses.is_empty() {
                    return Err(Error::EmptySequence);
                }
                PoseSequence::from_poses(seq.skeleton.clone(), seq.fps, poses)
            }
        }
    }
}

/// Start frames of the sliding windows covering `n` frames: stride `t / 2`,
/// the last window flush with the end.
pub fn window_starts(n: usize, t: usize) -> Vec<usize> {
    if n <= t {
        return vec![0];
    }
    let stride = (t / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + t < n).collect();
    starts.push(n - t);
    starts.dedup();
    starts
}

/// Window whose center is nearest to each frame (ties go to the earlier one).
pub fn window_owner(n: usize, t: usize, starts: &[usize]) -> Vec<usize> {
    let len = t.min(n);
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (w, &s) in starts.iter().enumerate() {
                let center = s as f64 + (len as f64 - 1.0) / 2.0;
                let d = (i as f64 - center).abs();
                if i >= s && i < s + len && d < best_d {
                    best = w;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Runs the model over sliding windows using the visibility flags of `frames`
/// and stitches the kept predictions together.
fn run_windows(seq: &PoseSequence, frames: &[Frame], model: &PoseBert<f32>) -> Result<Vec<Pose>> {
    let n = frames.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let t = model.config.seq_len;
    let len = t.min(n);
    let starts = window_starts(n, t);
    for &s in &starts {
        if !frames[s..s + len].iter().any(|f| f.visible) {
            return Err(Error::AllMasked { start: s });
        }
    }
    let mut preds: Vec<Vec<Pose>> = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(WINDOWS_PER_CALL) {
        let windows: Vec<&[Frame]> = chunk.iter().map(|&s| &frames[s..s + len]).collect();
        preds.extend(model.predict_windows(&seq.skeleton, &windows)?);
    }
    let owner = window_owner(n, t, &starts);
    Ok((0..n).map(|i| preds[owner[i]][i - starts[owner[i]]].clone()).collect())
}

fn visible_sequence(seq: &PoseSequence, poses: Vec<Pose>) -> Result<PoseSequence> {
    PoseSequence::from_poses(seq.skeleton.clone(), seq.fps, poses)
}

/// Re-estimates every frame, treating all of them as observed.
pub fn refine(seq: &PoseSequence, model: &PoseBert<f32>) -> Result<PoseSequence> {
    let frames: Vec<Frame> = seq
        .frames
        .iter()
        .map(|f| Frame {
            pose: f.pose.clone(),
            visible: true,
        })
        .collect();
    visible_sequence(seq, run_windows(seq, &frames, model)?)
}

/// Fills hidden frames and denoises visible ones.
pub fn complete(seq: &PoseSequence, model: &PoseBert<f32>) -> Result<PoseSequence> {
    visible_sequence(seq, run_windows(seq, &seq.frames, model)?)
}

/// Forecasts `horizon` frames after `observed` by appending masked slots up
/// to the model window length.
pub fn predict_future(observed: &PoseSequence, horizon: usize, model: &PoseBert<f32>) -> Result<Vec<Pose>> {
    let t = model.config.seq_len;
    let o = observed.len();
    if o + horizon > t {
        return Err(Error::WindowOverflow {
            observed: o,
            horizon,
            window: t,
        });
    }
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let last = observed.frames.last().ok_or(Error::EmptySequence)?.pose.clone();
    let mut frames: Vec<Frame> = observed
        .frames
        .iter()
        .map(|f| Frame {
            pose: f.pose.clone(),
            visible: true,
        })
        .collect();
    frames.resize(
        t,
        Frame {
            pose: last,
            visible: false,
        },
    );
    let out = model.predict_window(&observed.skeleton, &frames)?;
    Ok(out[o..o + horizon].to_vec())
}

/// Upper reference for forecasting: the model sees the whole window,
/// future frames included, and its estimates of frames
/// `observed..observed + horizon` are returned.
pub fn oracle_future(full: &PoseSequence, observed: usize, horizon: usize, model: &PoseBert<f32>) -> Result<Vec<Pose>> {
    let end = observed + horizon;
    if end > full.len() {
        return Err(Error::SequenceTooShort {
            needed: end,
            got: full.len(),
        });
    }
    let refined = refine(&full.window(0, end), model)?;
    Ok(refined.frames[observed..end].iter().map(|f| f.pose.clone()).collect())
}
