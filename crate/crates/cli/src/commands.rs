use std::ffi::OsString;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use posebert::config::ExperimentConfig;
use posebert::corruption::{corrupt_batch, CorruptionSpec, MaskRatio, NoiseLevel};
use posebert::io::{read_corpus, read_pseq, write_atomic, write_corpus, write_pseq};
use posebert::metrics::{write_csv, MetricReport};
use posebert::model::PoseBert;
use posebert::synthgen::generate_corpus;
use posebert::tasks::{self, Task, TaskRequest};
use posebert::train::{Checkpoint, Trainer};
use posebert::{Error, Result};

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.gen.seed = s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.gen.seed);
    let corpus = generate_corpus(&cfg.gen, cfg.gen.num_sequences, &mut rng)?;
    write_corpus(out, &corpus)
}

pub fn train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>, log: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let corpus = read_corpus(data)?;
    let (train, val) = (corpus.train(), corpus.val());
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load_for(path, &cfg.model)?;
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.config.max_steps = cfg.train.max_steps;
            t
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), cfg.gen.resolve_skeleton()?, &train)?,
    };
    if let Some(s) = train.first() {
        if s.skeleton.k() != trainer.model.config.num_joints {
            return Err(Error::LengthMismatch {
                expected: trainer.model.config.num_joints,
                got: s.skeleton.k(),
            });
        }
    }
    let log_path = log.unwrap_or_else(|| with_suffix(out, ".log.jsonl"));
    // a resumed run extends the previous log; the file is replaced only
    // once training finished
    let mut lines = match resume {
        Some(_) => std::fs::read_to_string(&log_path).unwrap_or_default(),
        None => String::new(),
    };
    trainer.run(&train, &val, |ev| {
        let line = serde_json::to_string(ev).expect("event serializes");
        eprintln!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    })?;
    trainer.to_checkpoint().save(out)?;
    write_atomic(&log_path, lines.as_bytes())
}

fn load_model(ckpt: &Path) -> Result<PoseBert<f32>> {
    let ckpt = Checkpoint::load(ckpt)?;
    Ok(PoseBert::new(ckpt.model_config, ckpt.params))
}

/// Model output, falling back to nearest-fill where a window has no visible
/// frame. The flag reports whether the fallback was taken.
fn complete_or_fill(seq: &posebert::skeleton::PoseSequence, model: &PoseBert<f32>) -> Result<(posebert::skeleton::PoseSequence, bool)> {
    match tasks::complete(seq, model) {
        Ok(s) => Ok((s, false)),
        Err(Error::AllMasked { .. }) => Ok((tasks::baseline_nearest_fill(seq)?, true)),
        Err(e) => Err(e),
    }
}

pub fn eval(ckpt: &Path, data: &Path, report: &Path, mask_ratio: f64, block_prob: f64, noise: f64, seed: u64) -> Result<()> {
    let model = load_model(ckpt)?;
    let test = read_corpus(data)?.test();
    let spec = CorruptionSpec {
        mask_ratio: MaskRatio::Fixed(mask_ratio),
        block_mask_prob: block_prob,
        max_block_len: Some((model.config.seq_len / 4).max(1)),
        gauss_sigma: NoiseLevel::Fixed(noise),
        ..CorruptionSpec::clean()
    };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let methods = ["model", "nearest_fill", "savgol", "median"];
    let mut per_method: Vec<Vec<MetricReport>> = vec![Vec::new(); methods.len()];
    let mut fallbacks = 0;
    for (i, seq) in test.iter().enumerate() {
        let input = corrupt_batch(std::slice::from_ref(seq), &spec, &mut rng)?.remove(0);
        let (ours, fell_back) = complete_or_fill(&input, &model)?;
        fallbacks += fell_back as usize;
        let outputs = [
            ours,
            tasks::baseline_nearest_fill(&input)?,
            tasks::baseline_savgol(&input, tasks::SAVGOL_WINDOW, tasks::SAVGOL_ORDER)?,
            tasks::baseline_median(&input, tasks::MEDIAN_WINDOW)?,
        ];
        let gt = seq.joint_positions();
        let name = format!("test{i:04}");
        for (rows, (m, out)) in per_method.iter_mut().zip(methods.iter().zip(&outputs)) {
            rows.push(MetricReport::compute(m, &name, &out.joint_positions(), &gt, seq.fps)?);
        }
    }
    if fallbacks > 0 {
        eprintln!("note: {fallbacks} sequence(s) had a fully hidden window; the model row uses nearest-fill there");
    }
    let mut rows = Vec::new();
    for (m, r) in methods.iter().zip(per_method) {
        let agg = MetricReport::aggregate(m, &r);
        rows.extend(r);
        rows.push(agg);
    }
    write_csv(report, &rows)
}

pub fn infer(ckpt: &Path, task: Task, input: &Path, out: &Path, horizon: usize, observed: Option<usize>) -> Result<()> {
    let model = load_model(ckpt)?;
    let seq = read_pseq(input)?;
    if seq.skeleton.k() != model.config.num_joints {
        return Err(Error::LengthMismatch {
            expected: model.config.num_joints,
            got: seq.skeleton.k(),
        });
    }
    let req = TaskRequest {
        task,
        horizon,
        observed: observed.unwrap_or(seq.len()),
    };
    write_pseq(out, &req.run(&seq, &model)?)
}

pub fn study(ckpt: &Path, data: &Path, drops: &[f64], report: &Path, gains: &Path, seed: u64) -> Result<()> {
    let model = load_model(ckpt)?;
    let test = read_corpus(data)?.test();
    let result = tasks::frame_drop_study(&test, drops, &model, seed)?;
    write_csv(report, &result.rows)?;
    write_atomic(gains, tasks::gains_csv(&result.gains).as_bytes())
}
