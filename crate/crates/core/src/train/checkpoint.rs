//! Binary checkpoint file.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "PBCK"
//! 4       4     format version, u32 little-endian
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header: model and training configuration,
//!               skeleton, optimizer step, generator state and the tensor
//!               manifest (name, shape, offset in f32 elements)
//! 16 + H  4·N   payload: N little-endian f32 values
//! ```
//!
//! The payload holds the model tensors, then the `buffers.init_state`
//! buffer, then the Adam first and second moments (`adam.m.*`, `adam.v.*`).

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{ModelConfig, ModelParams};
use crate::skeleton::SkeletonFile;

use super::{Adam, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run the model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub skeleton: SkeletonFile,
    pub params: ModelParams<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    skeleton: SkeletonFile,
    step: u64,
    rng: ChaCha8Rng,
    tensors: Vec<ManifestEntry>,
}

/// Named flat tensors in payload order.
fn layout(params: &ModelParams<f32>, adam: &Adam<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f32>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape, t.data.to_vec()))
        .collect();
    out.push((
        "buffers.init_state".into(),
        vec![params.init_state.len()],
        params.init_state.to_vec(),
    ));
    for (prefix, p) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
        out.extend(
            p.tensors()
                .into_iter()
                .map(|t| (format!("{prefix}{}", t.name), t.shape, t.data.to_vec())),
        );
    }
    out
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.adam.t
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = layout(&self.params, &self.adam);
        let mut manifest = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for (name, shape, data) in &tensors {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            offset += data.len();
        }
        let header = Header {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            skeleton: self.skeleton.clone(),
            step: self.adam.t,
            rng: self.rng.clone(),
            tensors: manifest,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing PBCK magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "file format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(format!("bad header: {e}")))?;
        header.model.validate()?;
        let payload = &bytes[16 + hlen..];
        if payload.len() % 4 != 0 {
            return Err(corrupt("payload is not a whole number of f32 values".into()));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut params = ModelParams::<f32>::zeros(&header.model);
        let mut adam = Adam::<f32>::new(&header.model);
        adam.t = header.step;
        let expected = layout(&params, &adam);
        if expected.len() != header.tensors.len() {
            return Err(corrupt(format!(
                "manifest lists {} tensors, configuration implies {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        let mut total = 0;
        for ((name, shape, data), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape || entry.offset != total {
                return Err(corrupt(format!("unexpected tensor entry {}", entry.name)));
            }
            total += data.len();
        }
        if total != values.len() {
            return Err(corrupt(format!("payload holds {} values, manifest needs {total}", values.len())));
        }

        let mut cursor = 0;
        let mut fill = |dst: &mut [f32]| {
            dst.copy_from_slice(&values[cursor..cursor + dst.len()]);
            cursor += dst.len();
        };
        for t in params.tensors_mut() {
            fill(t.data);
        }
        fill(params.init_state.as_slice_mut().expect("contiguous"));
        for t in adam.m.tensors_mut() {
            fill(t.data);
        }
        for t in adam.v.tensors_mut() {
            fill(t.data);
        }
        Ok(Checkpoint {
            model_config: header.model,
            train_config: header.train,
            skeleton: header.skeleton,
            params,
            adam,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// Loads a checkpoint and checks that its architecture equals `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        ckpt.check_compatible(expected)?;
        Ok(ckpt)
    }

    pub fn check_compatible(&self, expected: &ModelConfig) -> Result<()> {
        let got = &self.model_config;
        if got.num_joints != expected.num_joints {
            return Err(Error::VersionMismatch(format!(
                "checkpoint was trained for {} joints, expected {}",
                got.num_joints, expected.num_joints
            )));
        }
        if got != expected {
            return Err(Error::VersionMismatch(format!(
                "model configuration differs: checkpoint {got:?}, expected {expected:?}"
            )));
        }
        Ok(())
    }
}
