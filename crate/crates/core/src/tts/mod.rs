//! Non-autoregressive acoustic model: transformer encoder, additive speaker
//! conditioning, phoneme-level variance adaptor, length regulator,
//! transformer decoder and a mel head.

mod blocks;
pub mod data;
pub mod train;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use blocks::{FftBlock, SpeakerProjection, VariancePredictor};
pub use data::{prepare_examples, ProsodyStats, TrainingBatch, TtsExample};
pub use train::{train, LossRecord, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MelSpectrogram};
use crate::nn::{
    masked_fill_bias, read_container, sinusoid_positions, write_container, Init, Linear, ParamSource, Scope, TensorMap,
};
use crate::spkrep::joint::{EmbeddingTable, GstConfig, GstModule};
use crate::spkrep::pretrained::{enroll, SpeakerEncoder, MEL_CENTER, MEL_SCALE};
use crate::spkrep::{Scheme, SpeakerRep, REP_DIM};

const MAGIC: &[u8; 8] = b"TTSCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_filter: usize,
    pub ffn_kernel: usize,
    pub predictor_filter: usize,
    pub predictor_kernel: usize,
    pub gst: GstConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 256,
            layers: 4,
            heads: 2,
            ffn_filter: 1024,
            ffn_kernel: 3,
            predictor_filter: 256,
            predictor_kernel: 3,
            gst: GstConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.hidden,
            self.layers,
            self.heads,
            self.ffn_filter,
            self.ffn_kernel,
            self.predictor_filter,
            self.predictor_kernel,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("model sizes must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.ffn_kernel.is_multiple_of(2) || self.predictor_kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig("convolution kernels must be odd".into()));
        }
        self.gst.validate()
    }
}

/// Everything needed besides the parameters to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub vocab_size: usize,
    pub config: ModelConfig,
    pub schemes: Vec<Scheme>,
    /// Rows of the lookup table, when that scheme is active.
    pub speakers: Vec<String>,
    pub stats: ProsodyStats,
    pub features: FeatureConfig,
}

impl ModelHeader {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.features.validate()?;
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("empty phoneme vocabulary".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one speaker representation must be active".into(),
            ));
        }
        if self.schemes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("active schemes must be sorted and unique".into()));
        }
        if self.schemes.contains(&Scheme::Lookup) && self.speakers.is_empty() {
            return Err(Error::InvalidConfig("the lookup table needs training speakers".into()));
        }
        Ok(())
    }
}

/// Per-phoneme predictions of the variance adaptor, `(batch, phonemes)`.
#[derive(Debug, Clone)]
pub struct VariancePredictions {
    pub log_duration: Tensor,
    /// Normalized units.
    pub pitch: Tensor,
    pub energy: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(batch, frames, n_mels)` raw log-mel, zero on padding.
    pub mel: Tensor,
    pub frame_mask: Tensor,
    pub predictions: VariancePredictions,
    pub durations: Vec<Vec<u32>>,
}

/// Loss components as scalar tensors.
#[derive(Debug, Clone)]
pub struct Losses {
    pub mel: Tensor,
    pub pitch: Tensor,
    pub energy: Tensor,
    pub duration: Tensor,
    pub total: Tensor,
}

impl Losses {
    /// `[mel, pitch, energy, duration, total]`.
    pub fn values(&self) -> Result<[f64; 5]> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok([
            v(&self.mel)?,
            v(&self.pitch)?,
            v(&self.energy)?,
            v(&self.duration)?,
            v(&self.total)?,
        ])
    }
}

/// Result of inference for one utterance.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub durations: Vec<u32>,
    /// Normalized phoneme-level predictions.
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
}

/// Repeats row `j` of each sequence `durations[b][j]` times. Sequences are
/// right-padded with zeros to the longest total; returns the expanded
/// `(batch, frames, hidden)` tensor and its `(batch, frames)` mask.
pub fn length_regulate(hidden: &Tensor, durations: &[Vec<u32>]) -> Result<(Tensor, Tensor)> {
    let (b, l, h) = hidden.dims3()?;
    if durations.len() != b {
        return Err(Error::LengthMismatch(format!(
            "{} duration sequences for a batch of {b}",
            durations.len()
        )));
    }
    let totals: Vec<usize> = durations.iter().map(|d| d.iter().map(|&x| x as usize).sum()).collect();
    let t = totals.iter().copied().max().unwrap_or(0);
    if t == 0 {
        return Err(Error::EmptyInput("expanded sequence"));
    }
    let pad_row = (b * l) as u32;
    let mut idx = Vec::with_capacity(b * t);
    let mut mask = Vec::with_capacity(b * t);
    for (i, seq) in durations.iter().enumerate() {
        if seq.len() > l {
            return Err(Error::LengthMismatch(format!(
                "{} durations for {l} phoneme positions",
                seq.len()
            )));
        }
        for (j, &d) in seq.iter().enumerate() {
            idx.extend(std::iter::repeat_n((i * l + j) as u32, d as usize));
        }
        mask.extend(std::iter::repeat_n(1f32, totals[i]));
        idx.extend(std::iter::repeat_n(pad_row, t - totals[i]));
        mask.extend(std::iter::repeat_n(0f32, t - totals[i]));
    }
    let flat = Tensor::cat(
        &[
            hidden.reshape((b * l, h))?,
            Tensor::zeros((1, h), hidden.dtype(), hidden.device())?,
        ],
        0,
    )?;
    let idx = Tensor::from_vec(idx, b * t, hidden.device())?;
    let out = flat.index_select(&idx, 0)?.reshape((b, t, h))?;
    let mask = Tensor::from_vec(mask, (b, t), hidden.device())?.to_dtype(hidden.dtype())?;
    Ok((out, mask))
}

/// Sum of `values * mask` over `count` valid entries.
fn masked_mean(values: &Tensor, mask: &Tensor, count: f64) -> Result<Tensor> {
    Ok((values.broadcast_mul(mask)?.sum_all()? / count.max(1.0))?)
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    header: ModelHeader,
    embedding: Tensor,
    encoder: Vec<FftBlock>,
    decoder: Vec<FftBlock>,
    projections: BTreeMap<Scheme, SpeakerProjection>,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_embed: Linear,
    energy_embed: Linear,
    mel_head: Linear,
    table: Option<EmbeddingTable>,
    gst: Option<GstModule>,
}

impl AcousticModel {
    /// Builds the model, drawing parameters from `src` (a seeded store for
    /// training, a tensor map when loading).
    pub fn new(src: &mut dyn ParamSource, header: ModelHeader) -> Result<Self> {
        header.validate()?;
        let c = &header.config;
        let n_mels = header.features.n_mels;
        let mut s = Scope::root(src);
        let embedding = s.param("embedding", &[header.vocab_size, c.hidden], Init::Normal(0.5))?;
        let mut encoder = Vec::with_capacity(c.layers);
        let mut decoder = Vec::with_capacity(c.layers);
        for i in 0..c.layers {
            encoder.push(FftBlock::new(
                &mut s.sub(&format!("encoder{i}")),
                c.hidden,
                c.heads,
                c.ffn_filter,
                c.ffn_kernel,
            )?);
        }
        for i in 0..c.layers {
            decoder.push(FftBlock::new(
                &mut s.sub(&format!("decoder{i}")),
                c.hidden,
                c.heads,
                c.ffn_filter,
                c.ffn_kernel,
            )?);
        }
        let mut projections = BTreeMap::new();
        for &scheme in &header.schemes {
            let p = SpeakerProjection::new(&mut s.sub(&format!("proj_{scheme}")), REP_DIM, c.hidden)?;
            projections.insert(scheme, p);
        }
        let pred = |s: &mut Scope, name: &str| {
            VariancePredictor::new(&mut s.sub(name), c.hidden, c.predictor_filter, c.predictor_kernel)
        };
        let duration = pred(&mut s, "duration")?;
        let pitch = pred(&mut s, "pitch")?;
        let energy = pred(&mut s, "energy")?;
        let pitch_embed = Linear::new(&mut s.sub("pitch_embed"), 1, c.hidden, true)?;
        let energy_embed = Linear::new(&mut s.sub("energy_embed"), 1, c.hidden, true)?;
        let mel_head = Linear::new(&mut s.sub("mel_head"), c.hidden, n_mels, true)?;
        let table = if header.schemes.contains(&Scheme::Lookup) {
            Some(EmbeddingTable::new(&mut s.sub("lookup"), &header.speakers)?)
        } else {
            None
        };
        let gst = if header.schemes.contains(&Scheme::Gst) {
            Some(GstModule::new(&mut s.sub("gst"), n_mels, &c.gst)?)
        } else {
            None
        };
        Ok(AcousticModel {
            header,
            embedding,
            encoder,
            decoder,
            projections,
            duration,
            pitch,
            energy,
            pitch_embed,
            energy_embed,
            mel_head,
            table,
            gst,
        })
    }

    pub fn header(&self) -> &ModelHeader {
        &self.header
    }

    pub fn schemes(&self) -> &[Scheme] {
        &self.header.schemes
    }

    pub fn dtype(&self) -> DType {
        self.embedding.dtype()
    }

    pub fn table(&self) -> Option<&EmbeddingTable> {
        self.table.as_ref()
    }

    pub fn gst(&self) -> Option<&GstModule> {
        self.gst.as_ref()
    }

    fn check_phonemes(&self, phonemes: &[u32]) -> Result<()> {
        if phonemes.is_empty() {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        if let Some(&bad) = phonemes.iter().find(|&&p| p as usize >= self.header.vocab_size) {
            return Err(Error::OutOfVocabulary {
                id: bad,
                vocab: self.header.vocab_size,
            });
        }
        Ok(())
    }

    fn single(&self, phonemes: &[u32]) -> Result<(Tensor, Tensor)> {
        self.check_phonemes(phonemes)?;
        let ids = Tensor::new(phonemes, &Device::Cpu)?.unsqueeze(0)?;
        let mask = Tensor::ones((1, phonemes.len()), self.dtype(), &Device::Cpu)?;
        Ok((ids, mask))
    }

    fn stack(&self, x: &Tensor, mask: &Tensor, blocks: &[FftBlock]) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        let pos = sinusoid_positions(l, self.header.config.hidden, self.dtype())?;
        let mask3 = mask.unsqueeze(2)?;
        let bias = masked_fill_bias(mask)?.reshape((b, 1, 1, l))?;
        let mut h = x.broadcast_add(&pos)?.broadcast_mul(&mask3)?;
        for block in blocks {
            h = block.forward(&h, &mask3, &bias)?;
        }
        Ok(h)
    }

    /// `(batch, phonemes)` ids and mask to `(batch, phonemes, hidden)`.
    pub fn encode_batch(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let x = self
            .embedding
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((b, l, self.header.config.hidden))?;
        self.stack(&x, mask, &self.encoder)
    }

    /// Phoneme-level hidden sequence `(1, len, hidden)`.
    pub fn encode(&self, phonemes: &[u32]) -> Result<Tensor> {
        let (ids, mask) = self.single(phonemes)?;
        self.encode_batch(&ids, &mask)
    }

    /// Adds every supplied representation's projection at all valid positions.
    /// `reps` holds `(batch, 128)` tensors; an empty map leaves `hidden` unchanged.
    pub fn inject(&self, hidden: &Tensor, reps: &BTreeMap<Scheme, Tensor>, mask: &Tensor) -> Result<Tensor> {
        let mut h = hidden.clone();
        for (&scheme, rep) in reps {
            let proj = self.projections.get(&scheme).ok_or(Error::NoProjection(scheme))?;
            let delta = proj.forward(&rep.to_dtype(self.dtype())?)?.unsqueeze(1)?;
            h = h.broadcast_add(&delta.broadcast_mul(&mask.unsqueeze(2)?)?)?;
        }
        Ok(h)
    }

    /// Variance adaptor. With `teacher` = (pitch, energy, durations) the
    /// ground truth conditions the hidden and drives expansion; without it
    /// predictions are used and durations are `max(1, round(exp(pred)))`.
    pub fn variance_adapt(
        &self,
        hidden: &Tensor,
        mask: &Tensor,
        teacher: Option<(&Tensor, &Tensor, &[Vec<u32>])>,
    ) -> Result<(Tensor, Tensor, VariancePredictions, Vec<Vec<u32>>)> {
        let mask3 = mask.unsqueeze(2)?;
        let log_duration = self.duration.forward(hidden, &mask3)?;
        let pitch = self.pitch.forward(hidden, &mask3)?;
        let pitch_in = match teacher {
            Some((p, _, _)) => {
                if p.dims() != pitch.dims() {
                    return Err(Error::LengthMismatch(
                        "pitch targets do not match the phoneme batch".into(),
                    ));
                }
                p.clone()
            }
            None => pitch.clone(),
        };
        let h = (hidden
            + self
                .pitch_embed
                .forward(&pitch_in.unsqueeze(2)?)?
                .broadcast_mul(&mask3)?)?;
        let energy = self.energy.forward(&h, &mask3)?;
        let energy_in = match teacher {
            Some((_, e, _)) => {
                if e.dims() != energy.dims() {
                    return Err(Error::LengthMismatch(
                        "energy targets do not match the phoneme batch".into(),
                    ));
                }
                e.clone()
            }
            None => energy.clone(),
        };
        let h = (h + self
            .energy_embed
            .forward(&energy_in.unsqueeze(2)?)?
            .broadcast_mul(&mask3)?)?;

        let durations = match teacher {
            Some((_, _, d)) => d.to_vec(),
            None => {
                let lens = mask.sum(1)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                let pred = log_duration.to_dtype(DType::F64)?.to_vec2::<f64>()?;
                pred.iter()
                    .zip(&lens)
                    .map(|(row, &n)| {
                        row[..n as usize]
                            .iter()
                            .map(|&v| (v.exp().round() as u32).max(1))
                            .collect()
                    })
                    .collect()
            }
        };
        let (expanded, frame_mask) = length_regulate(&h, &durations)?;
        let predictions = VariancePredictions {
            log_duration,
            pitch,
            energy,
        };
        Ok((expanded, frame_mask, predictions, durations))
    }

    /// Frame-level hidden `(batch, frames, hidden)` to raw log-mel.
    pub fn decode_batch(&self, frames: &Tensor, frame_mask: &Tensor) -> Result<Tensor> {
        let h = self.stack(frames, frame_mask, &self.decoder)?;
        let y = ((self.mel_head.forward(&h)? * MEL_SCALE)? + MEL_CENTER)?;
        Ok(y.broadcast_mul(&frame_mask.unsqueeze(2)?)?)
    }

    pub fn decode(&self, frames: &Tensor) -> Result<MelSpectrogram> {
        let (b, t, _) = frames.dims3()?;
        if b != 1 || t == 0 {
            return Err(Error::EmptyInput("frame sequence"));
        }
        let mask = Tensor::ones((1, t), self.dtype(), &Device::Cpu)?;
        self.to_mel(&self.decode_batch(frames, &mask)?.squeeze(0)?)
    }

    fn to_mel(&self, mel: &Tensor) -> Result<MelSpectrogram> {
        let (t, n) = mel.dims2()?;
        let values = mel.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let arr = ndarray::Array2::from_shape_vec((t, n), values).expect("shape matches");
        MelSpectrogram::new(arr, self.header.features.hop, self.header.features.sample_rate)
    }

    /// Representations for a batch: pretrained ones from the batch, lookup
    /// rows by speaker, style tokens from the reference mels.
    fn batch_reps(&self, batch: &TrainingBatch) -> Result<BTreeMap<Scheme, Tensor>> {
        let mut reps = BTreeMap::new();
        for &scheme in &self.header.schemes {
            let rep = match scheme {
                Scheme::Lookup => {
                    let names: Vec<&str> = batch.speakers.iter().map(String::as_str).collect();
                    self.table.as_ref().expect("lookup active").lookup_tensor(&names)?
                }
                Scheme::Gst => self
                    .gst
                    .as_ref()
                    .expect("gst active")
                    .forward_tensors(&batch.ref_mels)?,
                other => batch.reps.get(&other).cloned().ok_or(Error::MissingEncoder(other))?,
            };
            reps.insert(scheme, rep);
        }
        Ok(reps)
    }

    /// Teacher-forced forward pass.
    pub fn forward(&self, batch: &TrainingBatch) -> Result<ForwardOutput> {
        let h = self.encode_batch(&batch.phonemes, &batch.phoneme_mask)?;
        let h = self.inject(&h, &self.batch_reps(batch)?, &batch.phoneme_mask)?;
        let teacher = (&batch.pitch, &batch.energy, batch.durations.as_slice());
        let (frames, frame_mask, predictions, durations) =
            self.variance_adapt(&h, &batch.phoneme_mask, Some(teacher))?;
        let mel = self.decode_batch(&frames, &frame_mask)?;
        Ok(ForwardOutput {
            mel,
            frame_mask,
            predictions,
            durations,
        })
    }

    /// Masked mel L1 plus phoneme-level MSE terms, summed without weights.
    pub fn loss(&self, out: &ForwardOutput, batch: &TrainingBatch) -> Result<Losses> {
        let (_, t_out, n_mels) = out.mel.dims3()?;
        let target = batch.mel.narrow(1, 0, t_out.min(batch.mel.dim(1)?))?;
        if target.dims() != out.mel.dims() {
            return Err(Error::LengthMismatch(format!(
                "predicted mel {:?} vs target {:?}",
                out.mel.dims(),
                batch.mel.dims()
            )));
        }
        let fmask = batch.frame_mask.narrow(1, 0, t_out)?;
        let frames = fmask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let phones = batch.phoneme_mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let mel = masked_mean(
            &(&out.mel - &target)?.abs()?,
            &fmask.unsqueeze(2)?,
            frames * n_mels as f64,
        )?;
        let pm = &batch.phoneme_mask;
        let p = &out.predictions;
        let pitch = masked_mean(&(&p.pitch - &batch.pitch)?.sqr()?, pm, phones)?;
        let energy = masked_mean(&(&p.energy - &batch.energy)?.sqr()?, pm, phones)?;
        let duration = masked_mean(&(&p.log_duration - &batch.log_duration)?.sqr()?, pm, phones)?;
        let total = (((&mel + &pitch)? + &energy)? + &duration)?;
        Ok(Losses {
            mel,
            pitch,
            energy,
            duration,
            total,
        })
    }

    /// Table row of a training speaker.
    pub fn lookup(&self, speaker: &str) -> Result<SpeakerRep> {
        self.table
            .as_ref()
            .ok_or(Error::MissingRepresentation(Scheme::Lookup))?
            .lookup(speaker)
    }

    /// Enrollment-averaged representations of every active scheme for one
    /// speaker. `encoders` supplies the pretrained schemes; `speaker` is
    /// required only when the lookup table is active.
    pub fn enroll(
        &self,
        encoders: &BTreeMap<Scheme, SpeakerEncoder>,
        speaker: Option<&str>,
        refs: &[MelSpectrogram],
    ) -> Result<BTreeMap<Scheme, SpeakerRep>> {
        let mut reps = BTreeMap::new();
        for &scheme in &self.header.schemes {
            let rep = match scheme {
                Scheme::Lookup => self.lookup(speaker.ok_or(Error::MissingRepresentation(Scheme::Lookup))?)?,
                Scheme::Gst => self.gst.as_ref().expect("gst active").enroll(refs)?,
                other => enroll(encoders.get(&other).ok_or(Error::MissingEncoder(other))?, refs)?,
            };
            reps.insert(scheme, rep);
        }
        Ok(reps)
    }

    /// Inference: encode, inject, predict prosody and durations, expand, decode.
    pub fn synthesize_detailed(&self, phonemes: &[u32], reps: &BTreeMap<Scheme, SpeakerRep>) -> Result<Synthesis> {
        let (ids, mask) = self.single(phonemes)?;
        let mut rep_tensors = BTreeMap::new();
        for &scheme in &self.header.schemes {
            let rep = reps.get(&scheme).ok_or(Error::MissingRepresentation(scheme))?;
            let t = Tensor::new(rep.vector.as_slice(), &Device::Cpu)?.unsqueeze(0)?;
            rep_tensors.insert(scheme, t);
        }
        if let Some(extra) = reps.keys().find(|s| !self.header.schemes.contains(s)) {
            return Err(Error::NoProjection(*extra));
        }
        let h = self.encode_batch(&ids, &mask)?;
        let h = self.inject(&h, &rep_tensors, &mask)?;
        let (frames, frame_mask, pred, durations) = self.variance_adapt(&h, &mask, None)?;
        let mel = self.decode_batch(&frames, &frame_mask)?.squeeze(0)?;
        let row = |t: &Tensor| -> Result<Vec<f32>> { Ok(t.squeeze(0)?.to_dtype(DType::F32)?.to_vec1()?) };
        Ok(Synthesis {
            mel: self.to_mel(&mel)?,
            durations: durations.into_iter().next().expect("one sequence"),
            pitch: row(&pred.pitch)?,
            energy: row(&pred.energy)?,
        })
    }

    pub fn synthesize(&self, phonemes: &[u32], reps: &BTreeMap<Scheme, SpeakerRep>) -> Result<MelSpectrogram> {
        Ok(self.synthesize_detailed(phonemes, reps)?.mel)
    }

    /// Writes the header and `params`, which must be this model's parameters.
    pub fn save(&self, params: &TensorMap, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        write_container(path, MAGIC, &header, params)
    }
}

/// A model rebuilt from frozen parameters, kept together with them.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: AcousticModel,
    pub params: TensorMap,
}

impl TrainedModel {
    pub fn from_params(header: ModelHeader, params: TensorMap) -> Result<Self> {
        let mut src = params.clone();
        let model = AcousticModel::new(&mut src, header)?;
        Ok(TrainedModel { model, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.model.save(&self.params, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = read_container(path, MAGIC)?;
        let header: ModelHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("bad model header: {e}")))?;
        let params = params.to_dtype(DType::F32)?;
        Self::from_params(header, params)
    }

    pub fn checksum(&self) -> Result<String> {
        self.params.checksum()
    }
}

/// Mean absolute difference per frame and band.
pub fn mel_l1(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::LengthMismatch(format!(
            "mel shapes {:?} and {:?}",
            a.values.dim(),
            b.values.dim()
        )));
    }
    let n = a.values.len() as f64;
    Ok(a.values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / n)
}

/// L1 after linearly resampling `b` along time to the frame count of `a`,
/// for comparing utterances spoken at different rates.
pub fn mel_l1_aligned(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.n_mels() != b.n_mels() {
        return Err(Error::LengthMismatch(format!(
            "{} and {} mel bands",
            a.n_mels(),
            b.n_mels()
        )));
    }
    let (ta, tb) = (a.frames(), b.frames());
    if ta == 0 || tb == 0 {
        return Err(Error::EmptyInput("mel frames"));
    }
    let mut total = 0f64;
    for t in 0..ta {
        let pos = if ta == 1 {
            0.0
        } else {
            t as f64 * (tb - 1) as f64 / (ta - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(tb - 1);
        let w = (pos - lo as f64) as f32;
        for m in 0..a.n_mels() {
            let v = (1.0 - w) * b.values[[lo, m]] + w * b.values[[hi, m]];
            total += (a.values[[t, m]] - v).abs() as f64;
        }
    }
    Ok(total / (ta * a.n_mels()) as f64)
}
