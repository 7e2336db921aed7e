use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AcousticModel, ModelConfig, ModelHeader, ProsodyStats, TrainedModel, TrainingBatch, TtsExample};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::nn::{warmup_cosine, Adam, VarStore};
use crate::spkrep::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub lr_floor: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 16,
            lr: 1e-3,
            warmup: 100,
            lr_floor: 1e-5,
            clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.lr_floor < 0.0 || self.clip < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Losses observed at one step, before that step's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub mel: f64,
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub fn write_loss_log(log: &[LossRecord], path: &Path) -> Result<()> {
    let mut out = String::from("step\tlr\tmel\tpitch\tenergy\tduration\ttotal\tgrad_norm\n");
    for r in log {
        writeln!(
            out,
            "{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.step, r.lr, r.mel, r.pitch, r.energy, r.duration, r.total, r.grad_norm
        )
        .expect("writing to a String");
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<LossRecord>,
}

/// Builds the header for a model trained on `examples`.
pub fn model_header(
    examples: &[TtsExample],
    vocab_size: usize,
    config: &ModelConfig,
    schemes: &[Scheme],
    features: &FeatureConfig,
) -> Result<ModelHeader> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let schemes: Vec<Scheme> = schemes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    for &scheme in &schemes {
        if scheme.is_pretrained() && examples.iter().any(|e| !e.reps.contains_key(&scheme)) {
            return Err(Error::MissingEncoder(scheme));
        }
    }
    let speakers: Vec<String> = examples
        .iter()
        .map(|e| e.speaker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let header = ModelHeader {
        vocab_size,
        config: config.clone(),
        schemes,
        speakers,
        stats: ProsodyStats::from_targets(examples.iter().map(|e| &e.targets)),
        features: features.clone(),
    };
    header.validate()?;
    Ok(header)
}

/// Cycles through seeded permutations of the example indices.
struct BatchSchedule {
    rng: ChaCha8Rng,
    n: usize,
    queue: Vec<usize>,
}

impl BatchSchedule {
    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.queue.is_empty() {
                self.queue = (0..self.n).collect();
                self.queue.shuffle(&mut self.rng);
                self.queue.reverse();
            }
            out.push(self.queue.pop().expect("refilled"));
        }
        out
    }
}

/// Jointly trains the acoustic model, its projections, the lookup table and
/// the style tokens. Pretrained representations are read from the examples
/// and never modified.
pub fn train(examples: &[TtsExample], header: ModelHeader, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    header.validate()?;
    let mut store = VarStore::new(cfg.seed, DType::F32);
    let model = AcousticModel::new(&mut store, header.clone())?;
    let mut opt = Adam::new(store.vars(), cfg.lr, 0.98)?;
    let mut schedule = BatchSchedule {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba7c4),
        n: examples.len(),
        queue: Vec::new(),
    };
    let batch_size = cfg.batch.min(examples.len());

    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<&TtsExample> = schedule.next(batch_size).into_iter().map(|i| &examples[i]).collect();
        let batch = TrainingBatch::collate(&picks, &header.stats, DType::F32, 0, 0)?;
        let out = model.forward(&batch)?;
        let losses = model.loss(&out, &batch)?;
        let [mel, pitch, energy, duration, total] = losses.values()?;
        let lr = warmup_cosine(step, cfg.steps, cfg.warmup, cfg.lr, cfg.lr_floor);
        opt.set_lr(lr);
        let mut grads = losses.total.backward()?;
        let grad_norm = opt.step(&mut grads, cfg.clip)?;
        log.push(LossRecord {
            step,
            lr,
            mel,
            pitch,
            energy,
            duration,
            total,
            grad_norm,
        });
        if step % 100 == 0 {
            log::debug!("step {step}: total {total:.4} mel {mel:.4}");
        }
    }
    Ok(TrainOutcome {
        model: TrainedModel::from_params(header, store.snapshot()?)?,
        log,
    })
}
