use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, MelSpectrogram, ProsodyTargets};
use crate::spkrep::pretrained::SpeakerEncoder;
use crate::spkrep::{Scheme, SpeakerRep, REP_DIM};

/// Global z-normalization statistics for phoneme-level prosody targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyStats {
    pub pitch_mean: f32,
    pub pitch_std: f32,
    pub energy_mean: f32,
    pub energy_std: f32,
}

impl Default for ProsodyStats {
    fn default() -> Self {
        ProsodyStats {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f32>) -> (f32, f32) {
    let (mut n, mut sum, mut sq) = (0usize, 0f64, 0f64);
    for v in values {
        n += 1;
        sum += v as f64;
        sq += (v as f64) * (v as f64);
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    (mean as f32, if std < 1e-6 { 1.0 } else { std as f32 })
}

impl ProsodyStats {
    /// Pitch statistics cover voiced phonemes only.
    pub fn from_targets<'a>(targets: impl Iterator<Item = &'a ProsodyTargets> + Clone) -> Self {
        let (pitch_mean, pitch_std) = mean_std(
            targets
                .clone()
                .flat_map(|t| t.pitch.iter().copied())
                .filter(|&p| p > 0.0),
        );
        let (energy_mean, energy_std) = mean_std(targets.flat_map(|t| t.energy.iter().copied()));
        ProsodyStats {
            pitch_mean,
            pitch_std,
            energy_mean,
            energy_std,
        }
    }

    /// Unvoiced phonemes (pitch 0) map to 0, the voiced mean.
    pub fn normalize_pitch(&self, hz: f32) -> f32 {
        if hz > 0.0 {
            (hz - self.pitch_mean) / self.pitch_std
        } else {
            0.0
        }
    }

    pub fn normalize_energy(&self, e: f32) -> f32 {
        (e - self.energy_mean) / self.energy_std
    }
}

/// One utterance prepared for acoustic-model training.
#[derive(Debug, Clone)]
pub struct TtsExample {
    pub id: String,
    pub speaker: String,
    pub phonemes: Vec<u32>,
    pub targets: ProsodyTargets,
    pub mel: MelSpectrogram,
    /// Frozen pretrained representations of this utterance's own mel.
    pub reps: BTreeMap<Scheme, SpeakerRep>,
}

impl TtsExample {
    pub fn from_utterance(
        utt: &Utterance,
        fx: &FeatureExtractor,
        encoders: &BTreeMap<Scheme, SpeakerEncoder>,
    ) -> Result<Self> {
        let (mel, targets) = fx.analyze(utt)?;
        let reps = encoders
            .iter()
            .map(|(&scheme, enc)| enc.embed(&mel).map(|r| (scheme, r)))
            .collect::<Result<_>>()?;
        Ok(TtsExample {
            id: utt.id.clone(),
            speaker: utt.speaker_id.clone(),
            phonemes: utt.phonemes.clone(),
            targets,
            mel,
            reps,
        })
    }
}

pub fn prepare_examples(
    corpus: &Corpus,
    fx: &FeatureExtractor,
    encoders: &BTreeMap<Scheme, SpeakerEncoder>,
) -> Result<Vec<TtsExample>> {
    corpus
        .utterances
        .iter()
        .map(|u| TtsExample::from_utterance(u, fx, encoders))
        .collect()
}

/// Padded tensors for a group of examples. Masks hold 1 on valid positions.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// `(batch, phonemes)`, u32.
    pub phonemes: Tensor,
    pub phoneme_mask: Tensor,
    /// Normalized phoneme-level targets, `(batch, phonemes)`.
    pub pitch: Tensor,
    pub energy: Tensor,
    pub log_duration: Tensor,
    pub durations: Vec<Vec<u32>>,
    /// `(batch, frames, n_mels)` raw log-mel targets.
    pub mel: Tensor,
    pub frame_mask: Tensor,
    pub speakers: Vec<String>,
    /// Pretrained representations, `(batch, 128)` per scheme.
    pub reps: BTreeMap<Scheme, Tensor>,
    /// Unpadded `(frames, n_mels)` reference mels for representations
    /// extracted inside the graph.
    pub ref_mels: Vec<Tensor>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    /// Pads to the longest example plus `extra_phonemes` / `extra_frames`
    /// positions of padding.
    pub fn collate(
        examples: &[&TtsExample],
        stats: &ProsodyStats,
        dtype: DType,
        extra_phonemes: usize,
        extra_frames: usize,
    ) -> Result<Self> {
        let first = examples.first().ok_or(Error::EmptyInput("training batch"))?;
        let n_mels = first.mel.n_mels();
        let b = examples.len();
        for ex in examples {
            if ex.phonemes.is_empty() {
                return Err(Error::EmptyInput("phoneme sequence"));
            }
            if ex.targets.len() != ex.phonemes.len() {
                return Err(Error::LengthMismatch(format!(
                    "{}: {} phonemes but {} prosody targets",
                    ex.id,
                    ex.phonemes.len(),
                    ex.targets.len()
                )));
            }
            let frames: usize = ex.targets.duration.iter().map(|&d| d as usize).sum();
            if frames != ex.mel.frames() {
                return Err(Error::DurationMismatch {
                    id: ex.id.clone(),
                    durations: frames,
                    frames: ex.mel.frames(),
                });
            }
        }
        let l = examples.iter().map(|e| e.phonemes.len()).max().unwrap_or(0) + extra_phonemes;
        let t = examples.iter().map(|e| e.mel.frames()).max().unwrap_or(0) + extra_frames;

        let mut phonemes = vec![0u32; b * l];
        let mut pmask = vec![0f32; b * l];
        let mut pitch = vec![0f32; b * l];
        let mut energy = vec![0f32; b * l];
        let mut logd = vec![0f32; b * l];
        let mut mel = vec![0f32; b * t * n_mels];
        let mut fmask = vec![0f32; b * t];
        for (i, ex) in examples.iter().enumerate() {
            for j in 0..ex.phonemes.len() {
                let k = i * l + j;
                phonemes[k] = ex.phonemes[j];
                pmask[k] = 1.0;
                pitch[k] = stats.normalize_pitch(ex.targets.pitch[j]);
                energy[k] = stats.normalize_energy(ex.targets.energy[j]);
                logd[k] = (ex.targets.duration[j].max(1) as f32).ln();
            }
            let frames = ex.mel.frames();
            let src = ex.mel.to_vec();
            mel[i * t * n_mels..i * t * n_mels + frames * n_mels].copy_from_slice(&src);
            fmask[i * t..i * t + frames].fill(1.0);
        }

        let dev = Device::Cpu;
        let f =
            |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> { Ok(Tensor::from_vec(v, shape, &dev)?.to_dtype(dtype)?) };
        let mut reps = BTreeMap::new();
        for &scheme in first.reps.keys() {
            let mut rows = Vec::with_capacity(b * REP_DIM);
            for ex in examples {
                let rep = ex.reps.get(&scheme).ok_or(Error::MissingRepresentation(scheme))?;
                rows.extend_from_slice(&rep.vector);
            }
            reps.insert(scheme, f(rows, &[b, REP_DIM])?);
        }
        let ref_mels = examples
            .iter()
            .map(|e| f(e.mel.to_vec(), &[e.mel.frames(), n_mels]))
            .collect::<Result<_>>()?;

        Ok(TrainingBatch {
            phonemes: Tensor::from_vec(phonemes, (b, l), &dev)?,
            phoneme_mask: f(pmask, &[b, l])?,
            pitch: f(pitch, &[b, l])?,
            energy: f(energy, &[b, l])?,
            log_duration: f(logd, &[b, l])?,
            durations: examples.iter().map(|e| e.targets.duration.clone()).collect(),
            mel: f(mel, &[b, t, n_mels])?,
            frame_mask: f(fmask, &[b, t])?,
            speakers: examples.iter().map(|e| e.speaker.clone()).collect(),
            reps,
            ref_mels,
        })
    }
}
