//! Frame-dropping study: hide a growing fraction of frames at random and
//! compare the network against nearest-fill and Savitzky-Golay smoothing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_nearest_fill, baseline_savgol, SAVGOL_ORDER, SAVGOL_WINDOW};
use super::complete;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::PoseBert;
use crate::skeleton::PoseSequence;

/// Relative MPJPE gains over nearest-fill at one drop fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropGain {
    pub fraction: f64,
    pub nearest_mpjpe_mm: f64,
    pub savgol_mpjpe_mm: f64,
    pub model_mpjpe_mm: f64,
    /// `(nearest − savgol) / nearest`; NaN when nearest-fill is exact.
    pub savgol_gain: f64,
    pub model_gain: f64,
    /// Sequences where some model window had no visible frame and the
    /// nearest-fill output was used instead.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    /// Aggregate metrics per (fraction, method); `sequence` is `drop=<f>`.
    pub rows: Vec<MetricReport>,
    pub gains: Vec<DropGain>,
}

/// Hides `round(fraction · n)` uniformly chosen frames, keeping at least one.
pub fn drop_mask<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Vec<bool> {
    let count = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut visible = vec![true; n];
    for i in sample(rng, n, count) {
        visible[i] = false;
    }
    visible
}

fn gain(base: f64, other: f64) -> f64 {
    if base > 0.0 {
        (base - other) / base
    } else {
        f64::NAN
    }
}

/// Sequence `i` at fraction index `f` draws its mask from stream
/// `f · len + i` of a generator seeded with `seed`.
pub fn frame_drop_study(seqs: &[PoseSequence], fractions: &[f64], model: &PoseBert<f32>, seed: u64) -> Result<StudyResult> {
    if seqs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut rows = Vec::new();
    let mut gains = Vec::new();
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!("drop fraction {fraction} outside [0, 1]")));
        }
        let per_seq: Vec<(MetricReport, MetricReport, MetricReport, bool)> = seqs
            .par_iter()
            .enumerate()
            .map(|(i, seq)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((fi * seqs.len() + i) as u64);
                let mut masked = seq.clone();
                for (f, v) in masked.frames.iter_mut().zip(drop_mask(seq.len(), fraction, &mut rng)) {
                    f.visible = v;
                }
                let nearest = baseline_nearest_fill(&masked)?;
                let savgol = baseline_savgol(&masked, SAVGOL_WINDOW, SAVGOL_ORDER)?;
                let (ours, fallback) = match complete(&masked, model) {
                    Ok(s) => (s, false),
                    Err(Error::AllMasked { .. }) => (nearest.clone(), true),
                    Err(e) => return Err(e),
                };
                let gt = seq.joint_positions();
                let name = format!("seq{i}");
                let report = |m: &str, s: &PoseSequence| MetricReport::compute(m, &name, &s.joint_positions(), &gt, seq.fps);
                Ok((report("nearest_fill", &nearest)?, report("savgol", &savgol)?, report("model", &ours)?, fallback))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = format!("drop={fraction:.2}");
        let mut agg = |method: &str, pick: &dyn Fn(&(MetricReport, MetricReport, MetricReport, bool)) -> MetricReport| {
            let all: Vec<MetricReport> = per_seq.iter().map(pick).collect();
            let mut r = MetricReport::aggregate(method, &all);
            r.sequence = label.clone();
            rows.push(r.clone());
            r
        };
        let n = agg("nearest_fill", &|r| r.0.clone());
        let s = agg("savgol", &|r| r.1.clone());
        let m = agg("model", &|r| r.2.clone());
        gains.push(DropGain {
            fraction,
            nearest_mpjpe_mm: n.mpjpe_mm,
            savgol_mpjpe_mm: s.mpjpe_mm,
            model_mpjpe_mm: m.mpjpe_mm,
            savgol_gain: gain(n.mpjpe_mm, s.mpjpe_mm),
            model_gain: gain(n.mpjpe_mm, m.mpjpe_mm),
            fallbacks: per_seq.iter().filter(|r| r.3).count(),
        });
    }
    Ok(StudyResult { rows, gains })
}

/// CSV of the gains table.
pub fn gains_csv(gains: &[DropGain]) -> String {
    let mut out = String::from("fraction,nearest_mpjpe_mm,savgol_mpjpe_mm,model_mpjpe_mm,savgol_gain,model_gain,fallbacks\n");
    let num = |x: f64| if x.is_nan() { "nan".to_string() } else { format!("{x:.4}") };
    for g in gains {
        out.push_str(&format!(
            "{:.2},{},{},{},{},{},{}\n",
            g.fraction,
            num(g.nearest_mpjpe_mm),
            num(g.savgol_mpjpe_mm),
            num(g.model_mpjpe_mm),
            num(g.savgol_gain),
            num(g.model_gain),
            g.fallbacks
        ));
    }
    out
}
