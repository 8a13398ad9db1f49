//! Files on disk: pose-sequence documents and crash-safe writes.
//!
//! A pose-sequence file is JSON:
//!
//! ```json
//! {
//!   "header": { "format": "pseq.v1", "fps": 30.0, "frame_count": 2,
//!               "skeleton": { "format": "skel.v1", "name": "...", ... } },
//!   "frames": [ { "rot": [ ... 3(K+1) axis-angle reals ... ],
//!                 "trans": [x, y, z], "visible": true }, ... ]
//! }
//! ```
//!
//! The first axis-angle triple is the global orientation.
//!
//! A corpus directory holds one such file per sequence plus `manifest.json`,
//! which lists the files in order and the train/val/test split as indices.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{Corpus, Split};
use crate::skeleton::{Frame, Pose, PoseSequence, SkeletonDef, SkeletonFile};
use crate::so3::{axisangle_to_rotation, rotation_to_axisangle, AxisAngle};

pub const PSEQ_FORMAT: &str = "pseq.v1";
pub const CORPUS_FORMAT: &str = "corpus.v1";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseqHeader {
    pub format: String,
    pub fps: f64,
    pub skeleton: SkeletonFile,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseqFrame {
    pub rot: Vec<f64>,
    pub trans: [f64; 3],
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseqFile {
    pub header: PseqHeader,
    pub frames: Vec<PseqFrame>,
}

impl PseqFile {
    pub fn from_sequence(seq: &PoseSequence) -> Self {
        let frames = seq
            .frames
            .iter()
            .map(|f| PseqFrame {
                rot: f
                    .pose
                    .rotations()
                    .flat_map(|r| {
                        let a = rotation_to_axisangle(r).0;
                        [a.x, a.y, a.z]
                    })
                    .collect(),
                trans: f.pose.trans.into(),
                visible: f.visible,
            })
            .collect();
        PseqFile {
            header: PseqHeader {
                format: PSEQ_FORMAT.into(),
                fps: seq.fps,
                skeleton: seq.skeleton.to_file(),
                frame_count: seq.len(),
            },
            frames,
        }
    }

    pub fn to_sequence(&self, path: &Path) -> Result<PoseSequence> {
        let bad = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason,
        };
        if self.header.format != PSEQ_FORMAT {
            return Err(Error::UnknownFormat(self.header.format.clone()));
        }
        if self.header.frame_count != self.frames.len() {
            return Err(bad(format!(
                "header announces {} frames, file holds {}",
                self.header.frame_count,
                self.frames.len()
            )));
        }
        let skel = Arc::new(SkeletonDef::from_file(self.header.skeleton.clone())?);
        let slots = skel.k() + 1;
        let mut frames = Vec::with_capacity(self.frames.len());
        for (t, f) in self.frames.iter().enumerate() {
            if f.rot.len() != 3 * slots {
                return Err(bad(format!("frame {t}: expected {} rotation values, got {}", 3 * slots, f.rot.len())));
            }
            if f.rot.iter().chain(&f.trans).any(|v| !v.is_finite()) {
                return Err(bad(format!("frame {t}: non-finite value")));
            }
            let mut rots = f
                .rot
                .chunks_exact(3)
                .map(|c| axisangle_to_rotation(AxisAngle(Vector3::new(c[0], c[1], c[2]))));
            let global_orient = rots.next().unwrap();
            frames.push(Frame {
                pose: Pose {
                    global_orient,
                    joint_rots: rots.collect(),
                    trans: Vector3::from(f.trans),
                },
                visible: f.visible,
            });
        }
        PoseSequence::new(skel, self.header.fps, frames)
    }
}

pub fn pseq_to_string(seq: &PoseSequence) -> String {
    let mut s = serde_json::to_string(&PseqFile::from_sequence(seq)).expect("serializable");
    s.push('\n');
    s
}

pub fn pseq_from_str(text: &str, path: &Path) -> Result<PoseSequence> {
    // check the tag before the full schema so foreign files get a clear error
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    match raw.pointer("/header/format").and_then(|v| v.as_str()) {
        Some(PSEQ_FORMAT) => {}
        Some(other) => return Err(Error::UnknownFormat(other.to_string())),
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                reason: "missing header.format".into(),
            })
        }
    }
    let file: PseqFile = serde_json::from_value(raw).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    file.to_sequence(path)
}

pub fn write_pseq(path: &Path, seq: &PoseSequence) -> Result<()> {
    write_atomic(path, pseq_to_string(seq).as_bytes())
}

pub fn read_pseq(path: &Path) -> Result<PoseSequence> {
    let text = std::fs::read_to_string(path)?;
    pseq_from_str(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub files: Vec<String>,
    pub split: Split,
}

/// Writes every sequence, then the manifest. Each file is written atomically
/// and the manifest comes last, so a directory with a manifest is complete.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..corpus.sequences.len()).map(|i| format!("seq_{i:05}.pseq.json")).collect();
    for (name, seq) in files.iter().zip(&corpus.sequences) {
        write_pseq(&dir.join(name), seq)?;
    }
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.into(),
        files,
        split: corpus.split.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_NAME), text.as_bytes())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST_NAME);
    if !path.is_file() {
        return Err(Error::NotFound(path));
    }
    let text = std::fs::read_to_string(&path)?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format != CORPUS_FORMAT {
        return Err(Error::UnknownFormat(manifest.format));
    }
    let n = manifest.files.len();
    let s = &manifest.split;
    if s.train.iter().chain(&s.val).chain(&s.test).any(|&i| i >= n) {
        return Err(Error::Parse {
            path,
            reason: "split index out of range".into(),
        });
    }
    let sequences = manifest
        .files
        .iter()
        .map(|f| read_pseq(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        sequences,
        split: manifest.split,
    })
}
