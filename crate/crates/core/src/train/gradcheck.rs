use serde::Serialize;

use super::{evaluate_batch, state_loss, Batch, LossWeights};
use crate::error::Result;
use crate::model::{Dropout, PoseBert};

/// Comparison of analytic and central-difference gradients for one tensor.
#[derive(Debug, Clone, Serialize)]
pub struct TensorGradCheck {
    pub name: String,
    pub len: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub grad_norm: f64,
}

/// Checks the gradient of the batch loss with respect to every learnable
/// tensor against central differences with step `h`. Dropout is off.
pub fn gradient_check(model: &PoseBert<f64>, batch: &Batch<f64>, w: LossWeights, h: f64) -> Result<Vec<TensorGradCheck>> {
    let (state, cache) = model.forward(&batch.inputs.view(), &batch.visible, batch.size, Dropout::Off)?;
    let (_, dstate) = state_loss(&model.config, &state.view(), &batch.targets, batch.size, w)?;
    let grad = model.backward(&cache, dstate);
    let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();

    let mut probe = model.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (ti, (name, an)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; an.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params.tensors()[ti].data[e];
            probe.params.tensors_mut()[ti].data[e] = orig + h;
            let fp = evaluate_batch(&probe, batch, w)?.total;
            probe.params.tensors_mut()[ti].data[e] = orig - h;
            let fm = evaluate_batch(&probe, batch, w)?.total;
            probe.params.tensors_mut()[ti].data[e] = orig;
            *slot = (fp - fm) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = an.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(an).max(norm(&numeric));
        out.push(TensorGradCheck {
            name: name.clone(),
            len: an.len(),
            rel_error: if scale > 0.0 { norm(&diff) / scale } else { 0.0 },
            max_abs_error: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
            grad_norm: norm(an),
        });
    }
    Ok(out)
}
