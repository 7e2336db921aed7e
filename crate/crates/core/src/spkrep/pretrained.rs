//! Speaker encoders pretrained before TTS training and frozen afterwards:
//! classification encoders (mean pooling for the d-vector variant, mean+std
//! statistics pooling for the x-vector variant) and the target-speaker
//! encoder of a voice-conversion autoencoder.

use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scheme, SpeakerRep, REP_DIM};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, MelSpectrogram};
use crate::nn::{
    instance_norm, read_container, relu, write_container, Adam, Conv1d, Linear, Scope, TensorMap, VarStore,
};

const MAGIC: &[u8; 8] = b"SPKENC01";

/// Fixed affine map bringing log-mels to roughly unit scale.
pub const MEL_CENTER: f64 = -4.0;
pub const MEL_SCALE: f64 = 4.0;

pub(crate) fn mel_tensor(mel: &MelSpectrogram, dtype: DType) -> Result<Tensor> {
    let data = mel.to_vec();
    Ok(Tensor::from_vec(data, (mel.frames(), mel.n_mels()), &Device::Cpu)?.to_dtype(dtype)?)
}

pub(crate) fn normalize(x: &Tensor) -> Result<Tensor> {
    Ok(((x - MEL_CENTER)? / MEL_SCALE)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    MeanStd,
}

impl Pooling {
    /// Pools `(batch, time, features)` over time.
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean(1)?;
        match self {
            Pooling::Mean => Ok(mean),
            Pooling::MeanStd => {
                let centered = x.broadcast_sub(&mean.unsqueeze(1)?)?;
                let std = (centered.sqr()?.mean(1)? + 1e-5)?.sqrt()?;
                Ok(Tensor::cat(&[mean, std], 1)?)
            }
        }
    }

    fn factor(self) -> usize {
        match self {
            Pooling::Mean => 1,
            Pooling::MeanStd => 2,
        }
    }
}

/// Frame-local (1x1 convolution) stack, temporal pooling, 128-d bottleneck
/// and a softmax head over training speakers.
const COSINE_SCALE: f64 = 16.0;

#[derive(Debug, Clone)]
struct ClassifierNet {
    frame: Vec<Linear>,
    bottleneck: Linear,
    head: Linear,
    pooling: Pooling,
}

impl ClassifierNet {
    fn new(s: &mut Scope, n_mels: usize, width: usize, pooling: Pooling, classes: usize) -> Result<Self> {
        let frame = vec![
            Linear::new(&mut s.sub("frame0"), n_mels, width, true)?,
            Linear::new(&mut s.sub("frame1"), width, width, true)?,
            Linear::new(&mut s.sub("frame2"), width, width, true)?,
        ];
        Ok(ClassifierNet {
            frame,
            bottleneck: Linear::new(&mut s.sub("bottleneck"), width * pooling.factor(), REP_DIM, true)?,
            head: Linear::new(&mut s.sub("head"), REP_DIM, classes, false)?,
            pooling,
        })
    }

    /// `(batch, time, n_mels)` normalized mels to `(batch, 128)`.
    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.frame {
            h = relu(&layer.forward(&h)?)?;
        }
        self.bottleneck.forward(&self.pooling.apply(&h)?)
    }

    /// Scaled cosine similarity to each class weight, so that training
    /// shapes the same geometry that verification scores.
    fn logits(&self, emb: &Tensor) -> Result<Tensor> {
        let unit = |t: &Tensor| -> Result<Tensor> {
            let norm = t.sqr()?.sum_keepdim(D::Minus1)?.affine(1.0, 1e-8)?.sqrt()?;
            Ok(t.broadcast_div(&norm)?)
        };
        let cos = unit(emb)?.matmul(&unit(self.head.weight())?.t()?)?;
        Ok(cos.affine(COSINE_SCALE, 0.0)?)
    }
}

/// Target-speaker encoder of the VC model: two frame-local layers, mean
/// pooling, linear projection to 128.
#[derive(Debug, Clone)]
struct VcSpeakerNet {
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl VcSpeakerNet {
    fn new(s: &mut Scope, n_mels: usize, width: usize) -> Result<Self> {
        Ok(VcSpeakerNet {
            l1: Linear::new(&mut s.sub("l1"), n_mels, width, true)?,
            l2: Linear::new(&mut s.sub("l2"), width, width, true)?,
            out: Linear::new(&mut s.sub("out"), width, REP_DIM, true)?,
        })
    }

    fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let h = relu(&self.l1.forward(x)?)?;
        let h = relu(&self.l2.forward(&h)?)?;
        self.out.forward(&h.mean(1)?)
    }
}

/// Instance-normalized convolutional content encoder.
#[derive(Debug, Clone)]
struct ContentEncoder {
    convs: Vec<Conv1d>,
}

impl ContentEncoder {
    fn new(s: &mut Scope, n_mels: usize, width: usize, content_dim: usize) -> Result<Self> {
        Ok(ContentEncoder {
            convs: vec![
                Conv1d::new(&mut s.sub("c0"), n_mels, width, 5, 1, 2)?,
                Conv1d::new(&mut s.sub("c1"), width, width, 5, 1, 2)?,
                Conv1d::new(&mut s.sub("c2"), width, content_dim, 5, 1, 2)?,
            ],
        })
    }

    /// `(batch, n_mels, time)` to `(batch, content_dim, time)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h0 = relu(&instance_norm(&self.convs[0].forward(x)?)?)?;
        let h1 = (relu(&instance_norm(&self.convs[1].forward(&h0)?)?)? + h0)?;
        instance_norm(&self.convs[2].forward(&h1)?)
    }
}

/// Convolutional decoder conditioned through adaptive instance normalization.
#[derive(Debug, Clone)]
struct AdainDecoder {
    input: Conv1d,
    convs: Vec<Conv1d>,
    affine: Vec<Linear>,
    output: Conv1d,
    width: usize,
}

impl AdainDecoder {
    fn new(s: &mut Scope, content_dim: usize, width: usize, n_mels: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut affine = Vec::new();
        for i in 0..3 {
            convs.push(Conv1d::new(&mut s.sub(&format!("conv{i}")), width, width, 5, 1, 2)?);
            affine.push(Linear::new(&mut s.sub(&format!("adain{i}")), REP_DIM, 2 * width, true)?);
        }
        Ok(AdainDecoder {
            input: Conv1d::new(&mut s.sub("input"), content_dim, width, 5, 1, 2)?,
            convs,
            affine,
            output: Conv1d::new(&mut s.sub("output"), width, n_mels, 1, 1, 0)?,
            width,
        })
    }

    fn forward(&self, content: &Tensor, speaker: &Tensor) -> Result<Tensor> {
        let mut h = relu(&self.input.forward(content)?)?;
        for (conv, affine) in self.convs.iter().zip(&self.affine) {
            let style = affine.forward(speaker)?.unsqueeze(2)?;
            let gamma = style.narrow(1, 0, self.width)?;
            let beta = style.narrow(1, self.width, self.width)?;
            let y = instance_norm(&conv.forward(&h)?)?;
            let y = y.broadcast_mul(&(gamma + 1.0)?)?.broadcast_add(&beta)?;
            h = (relu(&y)? + h)?;
        }
        self.output.forward(&h)
    }
}

#[derive(Debug, Clone)]
enum SpeakerNet {
    Classifier(ClassifierNet),
    Vc(VcSpeakerNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderHeader {
    scheme: Scheme,
    dim: usize,
    pooling: Pooling,
    n_mels: usize,
    width: usize,
    /// Softmax classes of a classification encoder; 0 for the VC encoder.
    classes: usize,
}

/// A frozen utterance-to-vector speaker encoder.
#[derive(Debug, Clone)]
pub struct SpeakerEncoder {
    header: EncoderHeader,
    params: TensorMap,
    net: SpeakerNet,
    frozen: bool,
}

impl SpeakerEncoder {
    fn from_params(header: EncoderHeader, params: TensorMap) -> Result<Self> {
        if header.dim != REP_DIM {
            return Err(Error::Checkpoint(format!(
                "encoder dimension {} differs from {REP_DIM}",
                header.dim
            )));
        }
        let mut src = params.clone();
        let mut s = Scope::root(&mut src);
        let net = match header.scheme {
            Scheme::Dvec | Scheme::Xvec => SpeakerNet::Classifier(ClassifierNet::new(
                &mut s.sub("cls"),
                header.n_mels,
                header.width,
                header.pooling,
                header.classes,
            )?),
            Scheme::Vc => SpeakerNet::Vc(VcSpeakerNet::new(&mut s.sub("spk"), header.n_mels, header.width)?),
            other => return Err(Error::NotPretrained(other)),
        };
        Ok(SpeakerEncoder {
            header,
            params,
            net,
            frozen: true,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.header.scheme
    }

    pub fn pooling(&self) -> Pooling {
        self.header.pooling
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn n_mels(&self) -> usize {
        self.header.n_mels
    }

    pub fn checksum(&self) -> Result<String> {
        self.params.checksum()
    }

    fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        match &self.net {
            SpeakerNet::Classifier(net) => net.embed(x),
            SpeakerNet::Vc(net) => net.embed(x),
        }
    }

    fn check(&self, mel: &MelSpectrogram) -> Result<()> {
        if !self.frozen {
            return Err(Error::NotFrozen);
        }
        if mel.frames() == 0 {
            return Err(Error::EmptyInput("mel spectrogram"));
        }
        if mel.n_mels() != self.header.n_mels {
            return Err(Error::LengthMismatch(format!(
                "encoder expects {} mel bands, got {}",
                self.header.n_mels,
                mel.n_mels()
            )));
        }
        Ok(())
    }

    /// Utterance-level representation of one mel-spectrogram.
    pub fn embed(&self, mel: &MelSpectrogram) -> Result<SpeakerRep> {
        self.check(mel)?;
        let x = normalize(&mel_tensor(mel, DType::F32)?)?.unsqueeze(0)?;
        let v = self.embed_tensor(&x)?.squeeze(0)?.to_vec1::<f32>()?;
        SpeakerRep::new(v, self.header.scheme)
    }

    pub fn embed_batch(&self, mels: &[MelSpectrogram]) -> Result<Vec<SpeakerRep>> {
        mels.iter().map(|m| self.embed(m)).collect()
    }

    /// Speaker posterior argmax for a classification encoder.
    pub fn classify(&self, mel: &MelSpectrogram) -> Result<usize> {
        let SpeakerNet::Classifier(net) = &self.net else {
            return Err(Error::InvalidConfig("the VC encoder has no classifier head".into()));
        };
        self.check(mel)?;
        let x = normalize(&mel_tensor(mel, DType::F32)?)?.unsqueeze(0)?;
        let logits = net.logits(&net.embed(&x)?)?;
        Ok(logits.argmax(D::Minus1)?.squeeze(0)?.to_scalar::<u32>()? as usize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        write_container(path, MAGIC, &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = read_container(path, MAGIC)?;
        let header: EncoderHeader =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("bad encoder header: {e}")))?;
        Self::from_params(header, params)
    }
}

/// Average of the per-utterance embeddings, not renormalized.
pub fn enroll(encoder: &SpeakerEncoder, mels: &[MelSpectrogram]) -> Result<SpeakerRep> {
    if mels.is_empty() {
        return Err(Error::EmptyInput("enrollment utterances"));
    }
    SpeakerRep::mean(&encoder.embed_batch(mels)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Training crop length in frames.
    pub segment: usize,
    pub width: usize,
    pub content_dim: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 300,
            lr: 1e-3,
            batch: 16,
            segment: 32,
            width: 256,
            content_dim: 16,
            seed: 0,
        }
    }
}

/// Mel-spectrograms with speaker labels, the input to pretraining.
#[derive(Debug, Clone)]
pub struct LabeledMels {
    pub mels: Vec<MelSpectrogram>,
    pub labels: Vec<usize>,
    pub speakers: Vec<String>,
}

impl LabeledMels {
    pub fn from_corpus(corpus: &Corpus, fx: &FeatureExtractor) -> Result<Self> {
        let mut mels = Vec::with_capacity(corpus.len());
        let mut labels = Vec::with_capacity(corpus.len());
        for utt in &corpus.utterances {
            mels.push(fx.mel(&utt.waveform)?);
            labels.push(corpus.speaker_index(&utt.speaker_id).expect("speaker listed"));
        }
        Ok(LabeledMels {
            mels,
            labels,
            speakers: corpus.speakers.clone(),
        })
    }

    fn check(&self) -> Result<usize> {
        if self.speakers.len() < 2 {
            return Err(Error::InvalidConfig(
                "pretraining needs a corpus with at least 2 speakers".into(),
            ));
        }
        let n_mels = self.mels.first().ok_or(Error::EmptyCorpus)?.n_mels();
        Ok(n_mels)
    }

    fn by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.speakers.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// Random crop of `len` frames, tiling short utterances.
fn crop(mel: &MelSpectrogram, len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let frames = mel.frames();
    let start = if frames > len {
        rng.random_range(0..=frames - len)
    } else {
        0
    };
    let mut out = Vec::with_capacity(len * mel.n_mels());
    for i in 0..len {
        out.extend(mel.values.row((start + i) % frames).iter());
    }
    out
}

fn crops_tensor(rows: Vec<Vec<f32>>, len: usize, n_mels: usize) -> Result<Tensor> {
    let b = rows.len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    normalize(&Tensor::from_vec(flat, (b, len, n_mels), &Device::Cpu)?)
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub encoder: SpeakerEncoder,
    /// Per-step training loss.
    pub losses: Vec<f32>,
    /// Accuracy and mean cross-entropy over full training utterances.
    pub accuracy: f32,
    pub loss: f32,
}

/// Trains a speaker classifier; the bottleneck before the softmax is the
/// representation. `Dvec` pools means, `Xvec` pools means and deviations.
pub fn pretrain_classifier(data: &LabeledMels, scheme: Scheme, cfg: &PretrainConfig) -> Result<ClassifierOutcome> {
    let pooling = match scheme {
        Scheme::Dvec => Pooling::Mean,
        Scheme::Xvec => Pooling::MeanStd,
        Scheme::Vc => return Err(Error::InvalidConfig("the VC encoder is trained by pretrain_vc".into())),
        other => return Err(Error::NotPretrained(other)),
    };
    let n_mels = data.check()?;
    let classes = data.speakers.len();
    let mut store = VarStore::new(cfg.seed, DType::F32);
    let net = ClassifierNet::new(
        &mut Scope::root(&mut store).sub("cls"),
        n_mels,
        cfg.width,
        pooling,
        classes,
    )?;
    let mut opt = Adam::new(store.vars(), cfg.lr, 0.999)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..data.mels.len())).collect();
        let rows = picks
            .iter()
            .map(|&i| crop(&data.mels[i], cfg.segment, &mut rng))
            .collect();
        let x = crops_tensor(rows, cfg.segment, n_mels)?;
        let labels: Vec<u32> = picks.iter().map(|&i| data.labels[i] as u32).collect();
        let target = Tensor::new(labels, &Device::Cpu)?;
        let loss = candle_nn::loss::cross_entropy(&net.logits(&net.embed(&x)?)?, &target)?;
        losses.push(loss.to_scalar::<f32>()?);
        let mut grads = loss.backward()?;
        opt.step(&mut grads, 5.0)?;
    }

    let header = EncoderHeader {
        scheme,
        dim: REP_DIM,
        pooling,
        n_mels,
        width: cfg.width,
        classes,
    };
    let encoder = SpeakerEncoder::from_params(header, store.snapshot()?)?;
    let (accuracy, loss) = evaluate_classifier(&encoder, data)?;
    Ok(ClassifierOutcome {
        encoder,
        losses,
        accuracy,
        loss,
    })
}

fn evaluate_classifier(encoder: &SpeakerEncoder, data: &LabeledMels) -> Result<(f32, f32)> {
    let SpeakerNet::Classifier(net) = &encoder.net else {
        unreachable!("classifier encoder");
    };
    let mut correct = 0;
    let mut total_loss = 0f32;
    for (mel, &label) in data.mels.iter().zip(&data.labels) {
        let x = normalize(&mel_tensor(mel, DType::F32)?)?.unsqueeze(0)?;
        let logits = net.logits(&net.embed(&x)?)?;
        let target = Tensor::new(&[label as u32], &Device::Cpu)?;
        total_loss += candle_nn::loss::cross_entropy(&logits, &target)?.to_scalar::<f32>()?;
        if logits.argmax(D::Minus1)?.squeeze(0)?.to_scalar::<u32>()? as usize == label {
            correct += 1;
        }
    }
    let n = data.mels.len() as f32;
    Ok((correct as f32 / n, total_loss / n))
}

/// The full voice-conversion autoencoder, kept for analysis; TTS uses only
/// its target-speaker encoder.
#[derive(Debug, Clone)]
pub struct VcModel {
    content: ContentEncoder,
    speaker: VcSpeakerNet,
    decoder: AdainDecoder,
}

impl VcModel {
    fn new(s: &mut Scope, n_mels: usize, cfg: &PretrainConfig) -> Result<Self> {
        Ok(VcModel {
            content: ContentEncoder::new(&mut s.sub("content"), n_mels, cfg.width / 2, cfg.content_dim)?,
            speaker: VcSpeakerNet::new(&mut s.sub("spk"), n_mels, cfg.width)?,
            decoder: AdainDecoder::new(&mut s.sub("dec"), cfg.content_dim, cfg.width / 2, n_mels)?,
        })
    }

    /// Normalized `(batch, time, n_mels)` content and speaker inputs.
    fn reconstruct(&self, content: &Tensor, speaker: &Tensor) -> Result<Tensor> {
        let code = self.content.forward(&content.transpose(1, 2)?.contiguous()?)?;
        let spk = self.speaker.embed(speaker)?;
        Ok(self.decoder.forward(&code, &spk)?.transpose(1, 2)?)
    }

    /// Speaks the content of `source` in the voice of `target`.
    pub fn convert(&self, source: &MelSpectrogram, target: &MelSpectrogram) -> Result<MelSpectrogram> {
        let src = normalize(&mel_tensor(source, DType::F32)?)?.unsqueeze(0)?;
        let tgt = normalize(&mel_tensor(target, DType::F32)?)?.unsqueeze(0)?;
        let out = ((self.reconstruct(&src, &tgt)?.squeeze(0)? * MEL_SCALE)? + MEL_CENTER)?;
        let values = out.to_vec2::<f32>()?;
        let arr =
            ndarray::Array2::from_shape_vec((values.len(), source.n_mels()), values.into_iter().flatten().collect())
                .expect("shape");
        MelSpectrogram::new(arr, source.hop, source.sample_rate)
    }

    /// Mean absolute self-reconstruction error in normalized units.
    pub fn reconstruction_l1(&self, mels: &[MelSpectrogram]) -> Result<f32> {
        let mut total = 0f32;
        for mel in mels {
            let x = normalize(&mel_tensor(mel, DType::F32)?)?.unsqueeze(0)?;
            let y = self.reconstruct(&x, &x)?;
            total += (y - &x)?.abs()?.mean_all()?.to_scalar::<f32>()?;
        }
        Ok(total / mels.len() as f32)
    }
}

#[derive(Debug, Clone)]
pub struct VcOutcome {
    pub encoder: SpeakerEncoder,
    pub model: VcModel,
    pub losses: Vec<f32>,
    pub initial_l1: f32,
    pub final_l1: f32,
}

/// Trains the VC autoencoder by self-reconstruction: the content encoder
/// sees a crop of one utterance, the speaker encoder a crop of another
/// utterance by the same speaker.
pub fn pretrain_vc(data: &LabeledMels, cfg: &PretrainConfig) -> Result<VcOutcome> {
    let n_mels = data.check()?;
    let mut store = VarStore::new(cfg.seed, DType::F32);
    let model = VcModel::new(&mut Scope::root(&mut store).sub("vc"), n_mels, cfg)?;
    let initial_l1 = model.reconstruction_l1(&data.mels)?;
    let mut opt = Adam::new(store.vars(), cfg.lr, 0.999)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7c7c);
    let groups = data.by_label();

    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut content_rows = Vec::with_capacity(cfg.batch);
        let mut speaker_rows = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let i = rng.random_range(0..data.mels.len());
            let group = &groups[data.labels[i]];
            let j = group[rng.random_range(0..group.len())];
            content_rows.push(crop(&data.mels[i], cfg.segment, &mut rng));
            speaker_rows.push(crop(&data.mels[j], cfg.segment, &mut rng));
        }
        let content = crops_tensor(content_rows, cfg.segment, n_mels)?;
        let speaker = crops_tensor(speaker_rows, cfg.segment, n_mels)?;
        let loss = (model.reconstruct(&content, &speaker)? - &content)?.abs()?.mean_all()?;
        losses.push(loss.to_scalar::<f32>()?);
        let mut grads = loss.backward()?;
        opt.step(&mut grads, 5.0)?;
    }

    let params = store.snapshot()?;
    let mut frozen = params.clone();
    let model = VcModel::new(&mut Scope::root(&mut frozen).sub("vc"), n_mels, cfg)?;
    let final_l1 = model.reconstruction_l1(&data.mels)?;

    // keep only the target-speaker encoder, renamed under `spk.`
    let mut spk = TensorMap::new();
    for (name, t) in params.with_prefix("vc.spk.").iter() {
        spk.insert(name.trim_start_matches("vc."), t.clone());
    }
    let header = EncoderHeader {
        scheme: Scheme::Vc,
        dim: REP_DIM,
        pooling: Pooling::Mean,
        n_mels,
        width: cfg.width,
        classes: 0,
    };
    Ok(VcOutcome {
        encoder: SpeakerEncoder::from_params(header, spk)?,
        model,
        losses,
        initial_l1,
        final_l1,
    })
}
