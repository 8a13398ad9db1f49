//! Forward and backward passes.
//!
//! Tokens of a batch are laid out as `batch × len` rows so every dense layer
//! is a single matrix product; only attention works per sequence.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::layers::{hconcat, relu_backward_inplace, relu_inplace, transpose, LnCache};
use super::params::{Block, ModelParams, Regressor};
use super::{cast, ModelConfig, Scalar};
use crate::error::{Error, Result};
use crate::skeleton::Pose;
use crate::so3::{gram_schmidt, Rot6D};

/// Whether the regressor hidden layers apply dropout.
pub enum Dropout<'r> {
    Off,
    On(&'r mut dyn RngCore),
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    x: Array2<F>,
    ln1: LnCache<F>,
    a: Array2<F>,
    qkv: Array2<F>,
    attn: AttentionCache<F>,
    ctx: Array2<F>,
    ln2: LnCache<F>,
    bn: Array2<F>,
    f1: Array2<F>,
    r: Array2<F>,
}

#[derive(Debug, Clone)]
struct RegCache<F> {
    z: Array2<F>,
    pre1: Array2<F>,
    h1: Array2<F>,
    mask1: Option<Array2<F>>,
    pre2: Array2<F>,
    h2: Array2<F>,
    mask2: Option<Array2<F>>,
}

/// Intermediate activations kept for [`PoseBert::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    batch: usize,
    len: usize,
    inputs: Array2<F>,
    visible: Vec<bool>,
    blocks: Vec<BlockCache<F>>,
    /// Block-major: all iterations of layer 0, then layer 1, ...
    regs: Vec<RegCache<F>>,
}

/// Network hyperparameters together with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBert<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Scalar> PoseBert<F> {
    pub fn new(config: ModelConfig, params: ModelParams<F>) -> Self {
        PoseBert { config, params }
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_parameters()
    }

    fn check_inputs(&self, inputs: &ArrayView2<F>, visible: &[bool], batch: usize) -> Result<usize> {
        let cfg = &self.config;
        if inputs.ncols() != cfg.input_dim() {
            return Err(Error::LengthMismatch {
                expected: cfg.input_dim(),
                got: inputs.ncols(),
            });
        }
        if visible.len() != inputs.nrows() {
            return Err(Error::LengthMismatch {
                expected: inputs.nrows(),
                got: visible.len(),
            });
        }
        if batch == 0 || inputs.nrows() % batch != 0 || inputs.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} rows do not split into {batch} sequences",
                inputs.nrows()
            )));
        }
        let len = inputs.nrows() / batch;
        if len > cfg.seq_len {
            return Err(Error::ShapeMismatch(format!(
                "window of {len} frames exceeds model length {}",
                cfg.seq_len
            )));
        }
        Ok(len)
    }

    /// Token embeddings: mask token for hidden frames, linear projection
    /// otherwise, plus the positional encoding.
    pub fn embed_inputs(&self, inputs: &ArrayView2<F>, visible: &[bool], batch: usize) -> Result<Array2<F>> {
        let len = self.check_inputs(inputs, visible, batch)?;
        let p = &self.params;
        let mut x = p.embed.forward(inputs);
        for (mut row, &vis) in x.axis_iter_mut(Axis(0)).zip(visible) {
            if !vis {
                row.assign(&p.mask_token);
            }
        }
        if self.config.positional_encoding {
            for b in 0..batch {
                let mut rows = x.slice_mut(s![b * len..(b + 1) * len, ..]);
                rows += &p.pos_enc.slice(s![..len, ..]);
            }
        }
        Ok(x)
    }

    fn block_forward(&self, block: &Block<F>, x: Array2<F>, batch: usize) -> (Array2<F>, BlockCache<F>) {
        let len = x.nrows() / batch;
        let (a, ln1) = block.ln1.forward(&x.view());
        let qkv = block.qkv.forward(&a.view());
        let (ctx, attn) = attention_forward(&qkv.view(), batch, len, self.config.heads);
        let mut h = block.proj.forward(&ctx.view());
        h += &x;
        let (bn, ln2) = block.ln2.forward(&h.view());
        let f1 = block.ff1.forward(&bn.view());
        let mut r = f1.clone();
        relu_inplace(&mut r);
        let mut y = block.ff2.forward(&r.view());
        y += &h;
        let cache = BlockCache {
            x,
            ln1,
            a,
            qkv,
            attn,
            ctx,
            ln2,
            bn,
            f1,
            r,
        };
        (y, cache)
    }

    fn block_backward(&self, block: &Block<F>, grad: &mut Block<F>, c: &BlockCache<F>, dy: Array2<F>, batch: usize) -> Array2<F> {
        let len = c.x.nrows() / batch;
        let mut dr = block.ff2.backward(&c.r.view(), &dy.view(), &mut grad.ff2);
        relu_backward_inplace(&mut dr, &c.f1);
        let dbn = block.ff1.backward(&c.bn.view(), &dr.view(), &mut grad.ff1);
        let mut dh = block.ln2.backward(&dbn.view(), &c.ln2, &mut grad.ln2);
        dh += &dy;
        let dctx = block.proj.backward(&c.ctx.view(), &dh.view(), &mut grad.proj);
        let dqkv = attention_backward(&dctx.view(), &c.qkv.view(), &c.attn, batch, len, self.config.heads);
        let da = block.qkv.backward(&c.a.view(), &dqkv.view(), &mut grad.qkv);
        let mut dx = block.ln1.backward(&da.view(), &c.ln1, &mut grad.ln1);
        dx += &dh;
        dx
    }

    /// Pre-layernorm transformer block `block_index` applied to `x`
    /// (`batch × len` rows).
    pub fn transformer_block(&self, block_index: usize, x: &ArrayView2<F>, batch: usize) -> Array2<F> {
        self.block_forward(&self.params.blocks[block_index], x.to_owned(), batch).0
    }

    fn regressor_forward(
        &self,
        reg: &Regressor<F>,
        x: &ArrayView2<F>,
        state: &ArrayView2<F>,
        dropout: &mut Dropout<'_>,
    ) -> (Array2<F>, RegCache<F>) {
        let rate = self.config.dropout;
        let mut make_mask = |shape: (usize, usize)| -> Option<Array2<F>> {
            match dropout {
                Dropout::On(rng) if rate > 0.0 => {
                    let keep = cast::<F>(1.0 / (1.0 - rate));
                    Some(Array2::from_shape_simple_fn(shape, || {
                        if rng.random::<f64>() < rate {
                            F::zero()
                        } else {
                            keep
                        }
                    }))
                }
                _ => None,
            }
        };
        let z = hconcat(x, state);
        let pre1 = reg.fc1.forward(&z.view());
        let mut h1 = pre1.clone();
        relu_inplace(&mut h1);
        let mask1 = make_mask(h1.dim());
        if let Some(m) = &mask1 {
            h1 *= m;
        }
        let pre2 = reg.fc2.forward(&h1.view());
        let mut h2 = pre2.clone();
        relu_inplace(&mut h2);
        let mask2 = make_mask(h2.dim());
        if let Some(m) = &mask2 {
            h2 *= m;
        }
        let delta = reg.out.forward(&h2.view());
        let cache = RegCache {
            z,
            pre1,
            h1,
            mask1,
            pre2,
            h2,
            mask2,
        };
        (delta, cache)
    }

    /// Returns `(dL/dx, dL/dstate_prev)` given `dL/dstate_next`.
    fn regressor_backward(
        &self,
        reg: &Regressor<F>,
        wt: &[Array2<F>; 3],
        grad: &mut Regressor<F>,
        c: &RegCache<F>,
        dstate: &Array2<F>,
    ) -> (Array2<F>, Array2<F>) {
        let d = self.config.dim;
        let mut dh2 = reg.out.backward_with(&c.h2.view(), &dstate.view(), &mut grad.out, &wt[2]);
        if let Some(m) = &c.mask2 {
            dh2 *= m;
        }
        relu_backward_inplace(&mut dh2, &c.pre2);
        let mut dh1 = reg.fc2.backward_with(&c.h1.view(), &dh2.view(), &mut grad.fc2, &wt[1]);
        if let Some(m) = &c.mask1 {
            dh1 *= m;
        }
        relu_backward_inplace(&mut dh1, &c.pre1);
        let dz = reg.fc1.backward_with(&c.z.view(), &dh1.view(), &mut grad.fc1, &wt[0]);
        let dx = dz.slice(s![.., ..d]).to_owned();
        let mut dprev = dz.slice(s![.., d..]).to_owned();
        dprev += dstate;
        (dx, dprev)
    }

    /// One regressor update `Δ` (dropout off) for token features `x` and the
    /// current state.
    pub fn regressor_step(&self, regressor_index: usize, x: &ArrayView2<F>, state: &ArrayView2<F>) -> Array2<F> {
        self.regressor_forward(&self.params.regressors[regressor_index], x, state, &mut Dropout::Off)
            .0
    }

    /// Regressor state at every token, starting from the init buffer.
    pub fn forward(
        &self,
        inputs: &ArrayView2<F>,
        visible: &[bool],
        batch: usize,
        mut dropout: Dropout<'_>,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        let len = self.check_inputs(inputs, visible, batch)?;
        let cfg = &self.config;
        let n = inputs.nrows();
        let mut x = self.embed_inputs(inputs, visible, batch)?;
        let mut state = Array2::zeros((n, cfg.state_dim()));
        state += &self.params.init_state;
        let mut blocks = Vec::with_capacity(cfg.layers);
        let mut regs = Vec::with_capacity(cfg.layers * cfg.regressor_iters);
        for (l, block) in self.params.blocks.iter().enumerate() {
            let (y, bc) = self.block_forward(block, x, batch);
            blocks.push(bc);
            let reg = &self.params.regressors[cfg.regressor_for_layer(l)];
            for _ in 0..cfg.regressor_iters {
                let (delta, rc) = self.regressor_forward(reg, &y.view(), &state.view(), &mut dropout);
                state += &delta;
                regs.push(rc);
            }
            x = y;
        }
        let cache = ForwardCache {
            batch,
            len,
            inputs: inputs.to_owned(),
            visible: visible.to_vec(),
            blocks,
            regs,
        };
        Ok((state, cache))
    }

    /// Gradients of all learnable tensors given `dL/dstate` at the output.
    pub fn backward(&self, cache: &ForwardCache<F>, dstate: Array2<F>) -> ModelParams<F> {
        let cfg = &self.config;
        let mut grad = ModelParams::zeros(cfg);
        let iters = cfg.regressor_iters;
        let mut dstate = dstate;
        let mut dnext: Option<Array2<F>> = None;
        let reg_t: Vec<[Array2<F>; 3]> = self
            .params
            .regressors
            .iter()
            .map(|r| [transpose(&r.fc1.weight.view()), transpose(&r.fc2.weight.view()), transpose(&r.out.weight.view())])
            .collect();
        for l in (0..cfg.layers).rev() {
            let ri = cfg.regressor_for_layer(l);
            let reg = &self.params.regressors[ri];
            let mut dy = dnext.take().unwrap_or_else(|| Array2::zeros((dstate.nrows(), cfg.dim)));
            for it in (0..iters).rev() {
                let rc = &cache.regs[l * iters + it];
                let (dx, dprev) = self.regressor_backward(reg, &reg_t[ri], &mut grad.regressors[ri], rc, &dstate);
                dy += &dx;
                dstate = dprev;
            }
            let dx = self.block_backward(&self.params.blocks[l], &mut grad.blocks[l], &cache.blocks[l], dy, cache.batch);
            dnext = Some(dx);
        }
        let dx0 = dnext.expect("at least one layer");
        if cfg.positional_encoding {
            for b in 0..cache.batch {
                let rows = dx0.slice(s![b * cache.len..(b + 1) * cache.len, ..]);
                let mut pe = grad.pos_enc.slice_mut(s![..cache.len, ..]);
                pe += &rows;
            }
        }
        let mut dvis = dx0;
        let mut dmask = Array1::zeros(cfg.dim);
        for (mut row, &vis) in dvis.axis_iter_mut(Axis(0)).zip(&cache.visible) {
            if !vis {
                dmask += &row;
                row.fill(F::zero());
            }
        }
        grad.mask_token = dmask;
        self.params
            .embed
            .accumulate(&cache.inputs.view(), &dvis.view(), &mut grad.embed);
        grad
    }

    /// Turns regressor states (one row per token) into poses.
    pub fn decode_state(&self, state: &ArrayView2<F>) -> Result<Vec<Pose>> {
        let cfg = &self.config;
        let nrot = cfg.num_joints + 1;
        let rot_dim = cfg.rot_dim();
        let mean_trans = if cfg.translation_head {
            None
        } else {
            Some(super::default_translation())
        };
        state
            .axis_iter(Axis(0))
            .map(|row| {
                let mut rots = Vec::with_capacity(nrot);
                for j in 0..nrot {
                    let v: [f64; 6] = std::array::from_fn(|i| row[6 * j + i].to_f64().unwrap());
                    rots.push(gram_schmidt(&Rot6D(v))?);
                }
                let trans = match mean_trans {
                    Some(t) => t,
                    None => {
                        let t = |i: usize| row[rot_dim + i].to_f64().unwrap();
                        cfg.camera.unproject_root(t(0), t(1), t(2))
                    }
                };
                let global_orient = rots.remove(0);
                Ok(Pose {
                    global_orient,
                    joint_rots: rots,
                    trans,
                })
            })
            .collect()
    }
}
