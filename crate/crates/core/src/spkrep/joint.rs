//! Speaker representations optimized together with the acoustic model: a
//! per-speaker embedding table and global style tokens attended to by a
//! reference-encoder query.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::pretrained::normalize;
use super::{Scheme, SpeakerRep, REP_DIM};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{relu, softmax_last, Conv1d, GruCell, Init, Linear, Scope};

/// One trainable 128-d row per training speaker.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    table: Tensor,
    speakers: Vec<String>,
}

impl EmbeddingTable {
    /// `speakers` must be sorted and unique; row `i` belongs to `speakers[i]`.
    pub fn new(s: &mut Scope, speakers: &[String]) -> Result<Self> {
        if speakers.is_empty() {
            return Err(Error::InvalidConfig(
                "embedding table needs at least one speaker".into(),
            ));
        }
        if speakers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "embedding table speakers must be sorted and unique".into(),
            ));
        }
        Ok(EmbeddingTable {
            table: s.param("table", &[speakers.len(), REP_DIM], Init::Normal(0.3))?,
            speakers: speakers.to_vec(),
        })
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn index(&self, speaker: &str) -> Result<usize> {
        self.speakers
            .binary_search_by(|s| s.as_str().cmp(speaker))
            .map_err(|_| Error::UnknownSpeaker(speaker.to_string()))
    }

    /// Rows for a batch of speakers, `(batch, 128)`.
    pub fn lookup_tensor(&self, speakers: &[&str]) -> Result<Tensor> {
        let idx = speakers
            .iter()
            .map(|s| self.index(s).map(|i| i as u32))
            .collect::<Result<Vec<_>>>()?;
        let idx = Tensor::new(idx, self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?)
    }

    pub fn lookup(&self, speaker: &str) -> Result<SpeakerRep> {
        let row = self.table.get(self.index(speaker)?)?;
        SpeakerRep::new(row.to_dtype(DType::F32)?.to_vec1()?, Scheme::Lookup)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GstConfig {
    pub n_tokens: usize,
    pub n_heads: usize,
    /// Output channels of the stride-2 reference convolutions.
    pub ref_channels: Vec<usize>,
    pub ref_hidden: usize,
}

impl Default for GstConfig {
    fn default() -> Self {
        GstConfig {
            n_tokens: 10,
            n_heads: 4,
            ref_channels: vec![32, 32, 64, 64],
            ref_hidden: 64,
        }
    }
}

impl GstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.n_heads == 0 || self.ref_hidden == 0 || self.ref_channels.is_empty() {
            return Err(Error::InvalidConfig("GST sizes must be positive".into()));
        }
        if !REP_DIM.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "{REP_DIM} is not divisible into {} heads",
                self.n_heads
            )));
        }
        Ok(())
    }
}

/// Reference encoder plus style-token attention.
#[derive(Debug, Clone)]
pub struct GstModule {
    convs: Vec<Conv1d>,
    gru: GruCell,
    query: Linear,
    key: Linear,
    value: Linear,
    tokens: Tensor,
    n_heads: usize,
}

impl GstModule {
    pub fn new(s: &mut Scope, n_mels: usize, cfg: &GstConfig) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::with_capacity(cfg.ref_channels.len());
        let mut cin = n_mels;
        for (i, &cout) in cfg.ref_channels.iter().enumerate() {
            convs.push(Conv1d::new(&mut s.sub(&format!("ref{i}")), cin, cout, 3, 2, 1)?);
            cin = cout;
        }
        Ok(GstModule {
            convs,
            gru: GruCell::new(&mut s.sub("gru"), cin, cfg.ref_hidden)?,
            query: Linear::new(&mut s.sub("query"), cfg.ref_hidden, REP_DIM, false)?,
            key: Linear::new(&mut s.sub("key"), REP_DIM, REP_DIM, false)?,
            value: Linear::new(&mut s.sub("value"), REP_DIM, REP_DIM, false)?,
            tokens: s.param("tokens", &[cfg.n_tokens, REP_DIM], Init::Normal(0.5))?,
            n_heads: cfg.n_heads,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.dim(0).expect("token matrix is 2-d")
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    /// Value-projected tokens, `(n_tokens, 128)`.
    pub fn values(&self) -> Result<Tensor> {
        self.value.forward(&self.tokens.tanh()?)
    }

    /// Reference vector of one raw log-mel `(frames, n_mels)`, shape `(1, ref_hidden)`.
    fn reference(&self, mel: &Tensor) -> Result<Tensor> {
        let mut h = normalize(mel)?.t()?.unsqueeze(0)?;
        for conv in &self.convs {
            h = relu(&conv.forward(&h)?)?;
        }
        self.gru.final_state(&h.transpose(1, 2)?.contiguous()?)
    }

    /// Style embedding `(1, 128)` and per-head attention weights `(heads, tokens)`.
    fn attend(&self, mel: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = REP_DIM / self.n_heads;
        let q = self
            .query
            .forward(&self.reference(mel)?)?
            .reshape((self.n_heads, 1, d))?;
        let keys = self.tokens.tanh()?;
        let k = self
            .key
            .forward(&keys)?
            .reshape(((), self.n_heads, d))?
            .transpose(0, 1)?;
        let v = self
            .value
            .forward(&keys)?
            .reshape(((), self.n_heads, d))?
            .transpose(0, 1)?;
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (d as f64).sqrt())?;
        let weights = softmax_last(&scores)?;
        let out = weights.matmul(&v.contiguous()?)?.reshape((1, REP_DIM))?;
        Ok((out, weights.squeeze(1)?))
    }

    /// Style embeddings for raw log-mels of varying length, `(batch, 128)`.
    pub fn forward_tensors(&self, mels: &[Tensor]) -> Result<Tensor> {
        if mels.is_empty() {
            return Err(Error::EmptyInput("reference mel batch"));
        }
        let outs = mels
            .iter()
            .map(|m| self.attend(m).map(|(o, _)| o))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&outs, 0)?)
    }

    fn mel_input(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        if mel.frames() == 0 {
            return Err(Error::EmptyInput("mel spectrogram"));
        }
        let data = mel.to_vec();
        Ok(Tensor::from_vec(data, (mel.frames(), mel.n_mels()), &Device::Cpu)?.to_dtype(self.tokens.dtype())?)
    }

    pub fn forward(&self, mel: &MelSpectrogram) -> Result<SpeakerRep> {
        let (out, _) = self.attend(&self.mel_input(mel)?)?;
        SpeakerRep::new(out.squeeze(0)?.to_dtype(DType::F32)?.to_vec1()?, Scheme::Gst)
    }

    /// Attention weights, one row per head.
    pub fn attention(&self, mel: &MelSpectrogram) -> Result<Vec<Vec<f64>>> {
        let (_, w) = self.attend(&self.mel_input(mel)?)?;
        Ok(w.to_dtype(DType::F64)?.to_vec2()?)
    }

    /// Mean style embedding over reference utterances.
    pub fn enroll(&self, mels: &[MelSpectrogram]) -> Result<SpeakerRep> {
        if mels.is_empty() {
            return Err(Error::EmptyInput("enrollment utterances"));
        }
        let reps = mels.iter().map(|m| self.forward(m)).collect::<Result<Vec<_>>>()?;
        SpeakerRep::mean(&reps)
    }
}
