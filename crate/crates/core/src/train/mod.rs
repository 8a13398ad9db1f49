//! Optimization: batch assembly from random windows, corruption, forward and
//! backward passes, Adam updates, and checkpoints that resume exactly.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;

use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, TensorGradCheck};
pub use loss::{pose_loss, state_loss, LossParts, LossWeights, StateTargets};

use crate::corruption::{corrupt_batch, CorruptionSpec};
use crate::error::{Error, Result};
use crate::model::{window_inputs, Dropout, ModelConfig, ModelParams, PoseBert, Scalar};
use crate::skeleton::{mean_pose, Pose, PoseSequence, SkeletonDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total number of updates; 0 only initializes.
    pub max_steps: u64,
    /// Logging and validation period, in steps.
    pub eval_every: u64,
    /// Number of fixed validation windows.
    pub val_windows: usize,
    pub seed: u64,
    pub w_pose: f64,
    pub w_trans: f64,
    pub corruption: CorruptionSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_steps: 20_000,
            eval_every: 500,
            val_windows: 64,
            seed: 0,
            w_pose: 1.0,
            w_trans: 1.0,
            corruption: CorruptionSpec::body(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("batch_size and eval_every must be at least 1".into()));
        }
        if self.corruption.random_pose_frac > 0.0 && self.batch_size < 2 {
            return Err(Error::BatchTooSmall);
        }
        if !(self.w_pose >= 0.0 && self.w_trans >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        self.corruption.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            pose: self.w_pose,
            trans: self.w_trans,
        }
    }
}

/// Network inputs, visibility and targets for equally long windows.
pub struct Batch<F> {
    pub inputs: Array2<F>,
    pub visible: Vec<bool>,
    pub targets: StateTargets,
    pub size: usize,
}

impl<F: Scalar> Batch<F> {
    /// `corrupted[i]` feeds the network, `clean[i]` is its target.
    pub fn new(cfg: &ModelConfig, skel: &SkeletonDef, corrupted: &[PoseSequence], clean: &[PoseSequence]) -> Result<Self> {
        if corrupted.len() != clean.len() || corrupted.is_empty() {
            return Err(Error::LengthMismatch {
                expected: clean.len(),
                got: corrupted.len(),
            });
        }
        let len = clean[0].len();
        let mut inputs = Array2::zeros((len * clean.len(), cfg.input_dim()));
        let mut visible = Vec::with_capacity(len * clean.len());
        let mut poses: Vec<Pose> = Vec::with_capacity(len * clean.len());
        for (b, (c, t)) in corrupted.iter().zip(clean).enumerate() {
            if c.len() != len || t.len() != len {
                return Err(Error::LengthMismatch { expected: len, got: c.len().min(t.len()) });
            }
            let (x, vis) = window_inputs::<F>(cfg, skel, &c.frames)?;
            inputs.slice_mut(s![b * len..(b + 1) * len, ..]).assign(&x);
            visible.extend(vis);
            poses.extend(t.poses().cloned());
        }
        Ok(Batch {
            inputs,
            visible,
            targets: StateTargets::new(&poses),
            size: clean.len(),
        })
    }
}

/// Loss of `model` on a batch, dropout off, no update.
pub fn evaluate_batch<F: Scalar>(model: &PoseBert<F>, batch: &Batch<F>, w: LossWeights) -> Result<LossParts> {
    let (state, _) = model.forward(&batch.inputs.view(), &batch.visible, batch.size, Dropout::Off)?;
    Ok(state_loss(&model.config, &state.view(), &batch.targets, batch.size, w)?.0)
}

/// One Adam step on `batch`. Dropout draws from `rng` when the model uses it.
pub fn train_step<F: Scalar>(
    model: &mut PoseBert<F>,
    adam: &mut Adam<F>,
    batch: &Batch<F>,
    lr: f64,
    w: LossWeights,
    rng: &mut dyn RngCore,
) -> Result<LossParts> {
    let step = adam.t + 1;
    let dropout = if model.config.dropout > 0.0 {
        Dropout::On(rng)
    } else {
        Dropout::Off
    };
    let (state, cache) = model.forward(&batch.inputs.view(), &batch.visible, batch.size, dropout)?;
    let (parts, dstate) = match state_loss(&model.config, &state.view(), &batch.targets, batch.size, w) {
        Ok(v) => v,
        Err(e) => {
            return Err(Error::NonFiniteLoss {
                step,
                detail: e.to_string(),
            })
        }
    };
    if !parts.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("loss {parts:?}"),
        });
    }
    let grad = model.backward(&cache, dstate);
    if let Some(t) = grad.tensors().iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("non-finite gradient in {}", t.name),
        });
    }
    adam.update(&mut model.params, &grad, lr);
    Ok(parts)
}

/// Progress record emitted every `eval_every` steps and at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub step: u64,
    /// Mean training loss since the previous event.
    pub loss: f64,
    pub pose: f64,
    pub trans: f64,
    pub val_loss: Option<f64>,
    pub elapsed_s: f64,
}

/// Random `len`-frame windows of sequences at least that long.
pub fn sample_windows<R: Rng + ?Sized>(data: &[PoseSequence], len: usize, n: usize, rng: &mut R) -> Result<Vec<PoseSequence>> {
    let eligible: Vec<&PoseSequence> = data.iter().filter(|s| s.len() >= len).collect();
    if eligible.is_empty() {
        return Err(Error::SequenceTooShort {
            needed: len,
            got: data.iter().map(|s| s.len()).max().unwrap_or(0),
        });
    }
    Ok((0..n)
        .map(|_| {
            let seq = eligible[rng.random_range(0..eligible.len())];
            let start = rng.random_range(0..=seq.len() - len);
            seq.window(start, len)
        })
        .collect())
}

/// Training state: model, optimizer and the generator every random choice
/// draws from.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PoseBert<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    pub skeleton: Arc<SkeletonDef>,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh model whose regressor starts from the mean pose of `data`.
    pub fn new(model_cfg: ModelConfig, config: TrainConfig, skeleton: Arc<SkeletonDef>, data: &[PoseSequence]) -> Result<Self> {
        model_cfg.validate()?;
        config.validate()?;
        if skeleton.k() != model_cfg.num_joints {
            return Err(Error::LengthMismatch {
                expected: model_cfg.num_joints,
                got: skeleton.k(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mean = mean_pose(&skeleton, data);
        let params = ModelParams::init(&model_cfg, &mean, &mut rng);
        Ok(Trainer {
            adam: Adam::new(&model_cfg),
            model: PoseBert::new(model_cfg, params),
            config,
            skeleton,
            rng,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.t
    }

    /// Samples, corrupts and trains on one batch.
    pub fn train_one(&mut self, data: &[PoseSequence]) -> Result<LossParts> {
        let t = self.model.config.seq_len;
        let clean = sample_windows(data, t, self.config.batch_size, &mut self.rng)?;
        let corrupted = corrupt_batch(&clean, &self.config.corruption, &mut self.rng)?;
        let batch = Batch::new(&self.model.config, &self.skeleton, &corrupted, &clean)?;
        let w = self.config.weights();
        train_step(&mut self.model, &mut self.adam, &batch, self.config.learning_rate, w, &mut self.rng)
    }

    /// Corrupted validation windows drawn from a generator independent of
    /// the training state, so they are identical after a resume.
    pub fn validation_batch(&self, val: &[PoseSequence]) -> Result<Option<Batch<f32>>> {
        if val.is_empty() || self.config.val_windows == 0 {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0f_7a11);
        let t = self.model.config.seq_len;
        let clean = sample_windows(val, t, self.config.val_windows, &mut rng)?;
        let corrupted = corrupt_batch(&clean, &self.config.corruption, &mut rng)?;
        Ok(Some(Batch::new(&self.model.config, &self.skeleton, &corrupted, &clean)?))
    }

    /// Trains until `max_steps`, calling `log` every `eval_every` steps and
    /// after the last one.
    pub fn run(&mut self, train: &[PoseSequence], val: &[PoseSequence], mut log: impl FnMut(&TrainEvent)) -> Result<()> {
        let val_batch = self.validation_batch(val)?;
        let w = self.config.weights();
        let start = Instant::now();
        let mut acc = LossParts::default();
        let mut n = 0u64;
        while self.step() < self.config.max_steps {
            let l = self.train_one(train)?;
            acc.total += l.total;
            acc.pose += l.pose;
            acc.trans += l.trans;
            n += 1;
            let step = self.step();
            if step % self.config.eval_every == 0 || step == self.config.max_steps {
                let val_loss = match &val_batch {
                    Some(b) => Some(evaluate_batch(&self.model, b, w)?.total),
                    None => None,
                };
                log(&TrainEvent {
                    step,
                    loss: acc.total / n as f64,
                    pose: acc.pose / n as f64,
                    trans: acc.trans / n as f64,
                    val_loss,
                    elapsed_s: start.elapsed().as_secs_f64(),
                });
                acc = LossParts::default();
                n = 0;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            skeleton: self.skeleton.to_file(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let skeleton = Arc::new(SkeletonDef::from_file(ckpt.skeleton)?);
        Ok(Trainer {
            model: PoseBert::new(ckpt.model_config, ckpt.params),
            adam: ckpt.adam,
            config: ckpt.train_config,
            skeleton,
            rng: ckpt.rng,
        })
    }
}
