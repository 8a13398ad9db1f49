use crate::model::{cast, ModelConfig, ModelParams, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction and constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Adam {
            t: 0,
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams<F>, grad: &ModelParams<F>, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 / (1.0 - BETA1.powi(t));
        let c2 = 1.0 / (1.0 - BETA2.powi(t));
        let (b1, b2, eps, lr) = (cast::<F>(BETA1), cast::<F>(BETA2), cast::<F>(EPS), cast::<F>(lr));
        let (c1, c2) = (cast::<F>(c1), cast::<F>(c2));
        let one = F::one();
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for (((p, &g), m), v) in p.data.iter_mut().zip(g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m * c1;
                let vh = *v * c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
