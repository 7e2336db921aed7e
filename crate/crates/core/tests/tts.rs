use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use clonetts_core::corpus::{generate_synthetic, SyntheticSpec};
use clonetts_core::features::{FeatureConfig, FeatureExtractor, MelSpectrogram, ProsodyTargets};
use clonetts_core::nn::VarStore;
use clonetts_core::spkrep::joint::GstConfig;
use clonetts_core::spkrep::{Scheme, SpeakerRep, REP_DIM};
use clonetts_core::tts::train::model_header;
use clonetts_core::tts::{
    length_regulate, mel_l1, mel_l1_aligned, prepare_examples, train, AcousticModel, ModelConfig, ModelHeader,
    ProsodyStats, TrainConfig, TrainedModel, TrainingBatch, TtsExample,
};
use clonetts_core::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        layers: 1,
        heads: 2,
        ffn_filter: 8,
        ffn_kernel: 3,
        predictor_filter: 8,
        predictor_kernel: 3,
        gst: GstConfig {
            n_tokens: 3,
            n_heads: 2,
            ref_channels: vec![4, 4],
            ref_hidden: 4,
        },
    }
}

fn speakers() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

fn header(schemes: &[Scheme]) -> ModelHeader {
    ModelHeader {
        vocab_size: 5,
        config: tiny_config(),
        schemes: schemes.to_vec(),
        speakers: speakers(),
        stats: ProsodyStats::default(),
        features: FeatureConfig::default(),
    }
}

fn model(schemes: &[Scheme], dtype: DType, seed: u64) -> (AcousticModel, VarStore) {
    let mut vs = VarStore::new(seed, dtype);
    let m = AcousticModel::new(&mut vs, header(schemes)).unwrap();
    (m, vs)
}

fn rep(scheme: Scheme, phase: f32) -> SpeakerRep {
    SpeakerRep::new((0..REP_DIM).map(|i| (i as f32 * 0.7 + phase).sin()).collect(), scheme).unwrap()
}

fn example(id: &str, speaker: &str, phonemes: Vec<u32>, durations: Vec<u32>, phase: f32) -> TtsExample {
    let frames: usize = durations.iter().map(|&d| d as usize).sum();
    let mel = Array2::from_shape_fn((frames, 80), |(t, m)| -6.0 + ((t * 7 + m) as f32 * 0.13 + phase).sin());
    let n = phonemes.len();
    TtsExample {
        id: id.into(),
        speaker: speaker.into(),
        targets: ProsodyTargets {
            pitch: (0..n)
                .map(|j| if j % 3 == 2 { 0.0 } else { 0.5 + j as f32 * 0.3 + phase })
                .collect(),
            energy: (0..n).map(|j| (j as f32 - phase).cos()).collect(),
            duration: durations,
        },
        phonemes,
        mel: MelSpectrogram::new(mel, 256, 22050).unwrap(),
        reps: [(Scheme::Dvec, rep(Scheme::Dvec, phase))].into_iter().collect(),
    }
}

fn toy_examples() -> Vec<TtsExample> {
    vec![
        example("u1", "a", vec![1, 3], vec![2, 3], 0.0),
        example("u2", "b", vec![4, 2, 1], vec![1, 2, 2], 1.0),
    ]
}

fn ids(p: &[u32]) -> (Tensor, Tensor) {
    (
        Tensor::new(p, &Device::Cpu).unwrap().unsqueeze(0).unwrap(),
        Tensor::ones((1, p.len()), DType::F32, &Device::Cpu).unwrap(),
    )
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b)
        .unwrap()
        .abs()
        .unwrap()
        .flatten_all()
        .unwrap()
        .max(0)
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap()
}

#[test]
fn length_regulator_examples() {
    let h = Tensor::arange(0f32, 6.0, &Device::Cpu)
        .unwrap()
        .reshape((1, 3, 2))
        .unwrap();
    let (out, mask) = length_regulate(&h, &[vec![2, 1, 3]]).unwrap();
    let rows = out.squeeze(0).unwrap().to_vec2::<f32>().unwrap();
    let expect = [0, 0, 1, 2, 2, 2];
    assert_eq!(rows.len(), 6);
    for (row, &p) in rows.iter().zip(&expect) {
        assert_eq!(row, &vec![2.0 * p as f32, 2.0 * p as f32 + 1.0]);
    }
    assert_eq!(mask.to_vec2::<f32>().unwrap(), vec![vec![1.0; 6]]);

    let (same, _) = length_regulate(&h, &[vec![1, 1, 1]]).unwrap();
    assert_eq!(max_diff(&same, &h), 0.0);
    assert!(length_regulate(&h, &[vec![0, 0, 0]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn length_regulator_frames_equal_duration_sums(
        seqs in prop::collection::vec(prop::collection::vec(0u32..6, 1..7), 1..4)
    ) {
        prop_assume!(seqs.iter().any(|s| s.iter().any(|&d| d > 0)));
        let l = seqs.iter().map(Vec::len).max().unwrap();
        let h = Tensor::arange(0f32, (seqs.len() * l * 2) as f32, &Device::Cpu).unwrap()
            .reshape((seqs.len(), l, 2)).unwrap();
        let (out, mask) = length_regulate(&h, &seqs).unwrap();
        let mask = mask.to_vec2::<f32>().unwrap();
        let out = out.to_vec3::<f32>().unwrap();
        for (b, seq) in seqs.iter().enumerate() {
            let total: u32 = seq.iter().sum();
            prop_assert_eq!(mask[b].iter().sum::<f32>() as u32, total);
            let mut t = 0;
            for (j, &d) in seq.iter().enumerate() {
                for _ in 0..d {
                    prop_assert_eq!(out[b][t][0], ((b * l + j) * 2) as f32);
                    t += 1;
                }
            }
            for row in &out[b][t..] {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn encoder_shapes_positions_and_errors() {
    let (m, _) = model(&[Scheme::Lookup], DType::F32, 0);
    let h = m.encode(&[1, 2, 3, 4]).unwrap();
    assert_eq!(h.dims(), &[1, 4, 8]);
    let r = m.encode(&[4, 3, 2, 1]).unwrap();
    let reversed_back = r
        .squeeze(0)
        .unwrap()
        .index_select(&Tensor::new(&[3u32, 2, 1, 0], &Device::Cpu).unwrap(), 0)
        .unwrap();
    assert!(max_diff(&reversed_back, &h.squeeze(0).unwrap()) > 1e-4);
    assert!(matches!(m.encode(&[]), Err(Error::EmptyInput(_))));
    assert!(matches!(m.encode(&[1, 5]), Err(Error::OutOfVocabulary { id: 5, .. })));
}

#[test]
fn injection_adds_time_constant_projected_vectors() {
    let (m, _) = model(&[Scheme::Vc, Scheme::Lookup], DType::F32, 1);
    let (p, mask) = ids(&[1, 2, 3]);
    let h = m.encode_batch(&p, &mask).unwrap();
    let as_t = |r: &SpeakerRep| {
        Tensor::new(r.vector.as_slice(), &Device::Cpu)
            .unwrap()
            .unsqueeze(0)
            .unwrap()
    };

    assert_eq!(max_diff(&m.inject(&h, &BTreeMap::new(), &mask).unwrap(), &h), 0.0);
    let zero = SpeakerRep::new(vec![0.0; REP_DIM], Scheme::Vc).unwrap();
    let z: BTreeMap<_, _> = [(Scheme::Vc, as_t(&zero))].into_iter().collect();
    assert_eq!(max_diff(&m.inject(&h, &z, &mask).unwrap(), &h), 0.0);

    let vc: BTreeMap<_, _> = [(Scheme::Vc, as_t(&rep(Scheme::Vc, 0.3)))].into_iter().collect();
    let lk: BTreeMap<_, _> = [(Scheme::Lookup, as_t(&rep(Scheme::Lookup, 1.1)))]
        .into_iter()
        .collect();
    let d_vc = (m.inject(&h, &vc, &mask).unwrap() - &h).unwrap().squeeze(0).unwrap();
    let rows = d_vc.to_vec2::<f32>().unwrap();
    assert!(rows
        .iter()
        .all(|r| r.iter().zip(&rows[0]).all(|(a, b)| (a - b).abs() < 1e-5)));
    assert!(rows[0].iter().any(|v| v.abs() > 1e-4));

    let d_lk = (m.inject(&h, &lk, &mask).unwrap() - &h).unwrap().squeeze(0).unwrap();
    let both: BTreeMap<_, _> = vc.into_iter().chain(lk).collect();
    let d_both = (m.inject(&h, &both, &mask).unwrap() - &h).unwrap().squeeze(0).unwrap();
    assert!(max_diff(&d_both, &(d_vc + d_lk).unwrap()) < 1e-5);

    let gst: BTreeMap<_, _> = [(Scheme::Gst, as_t(&rep(Scheme::Gst, 0.0)))].into_iter().collect();
    assert!(matches!(
        m.inject(&h, &gst, &mask),
        Err(Error::NoProjection(Scheme::Gst))
    ));
}

#[test]
fn inference_durations_are_at_least_one_frame() {
    let (m, _) = model(&[Scheme::Lookup], DType::F32, 2);
    let reps: BTreeMap<_, _> = [(Scheme::Lookup, m.lookup("a").unwrap())].into_iter().collect();
    let s = m.synthesize_detailed(&[1, 2, 3, 4, 0], &reps).unwrap();
    assert_eq!(s.durations.len(), 5);
    assert!(s.durations.iter().all(|&d| d >= 1));
    assert_eq!(s.mel.frames(), s.durations.iter().sum::<u32>() as usize);
    assert_eq!(s.mel.n_mels(), 80);
    let again = m.synthesize(&[1, 2, 3, 4, 0], &reps).unwrap();
    assert_eq!(again, s.mel);
}

#[test]
fn teacher_targets_must_match() {
    let (m, _) = model(&[Scheme::Lookup], DType::F32, 3);
    let (p, mask) = ids(&[1, 2, 3]);
    let h = m.encode_batch(&p, &mask).unwrap();
    let wrong = Tensor::zeros((1, 2), DType::F32, &Device::Cpu).unwrap();
    let right = Tensor::zeros((1, 3), DType::F32, &Device::Cpu).unwrap();
    let d = vec![vec![1, 1, 1]];
    assert!(m.variance_adapt(&h, &mask, Some((&wrong, &right, &d))).is_err());
    let (frames, fmask, _, used) = m.variance_adapt(&h, &mask, Some((&right, &right, &d))).unwrap();
    assert_eq!(frames.dims(), &[1, 3, 8]);
    assert_eq!(fmask.dims(), &[1, 3]);
    assert_eq!(used, d);
}

#[test]
fn decoder_shapes_and_determinism() {
    let (m, _) = model(&[Scheme::Lookup], DType::F32, 4);
    let x = Tensor::randn(0f32, 1.0, (1, 11, 8), &Device::Cpu).unwrap();
    let a = m.decode(&x).unwrap();
    assert_eq!((a.frames(), a.n_mels()), (11, 80));
    assert!(a.values.iter().all(|v| v.is_finite()));
    assert_eq!(a, m.decode(&x).unwrap());
    assert!(m
        .decode(&Tensor::zeros((1, 0, 8), DType::F32, &Device::Cpu).unwrap())
        .is_err());
}

#[test]
fn loss_components() {
    let schemes = [Scheme::Dvec, Scheme::Lookup, Scheme::Gst];
    let (m, _) = model(&schemes, DType::F64, 5);
    let ex = toy_examples();
    let refs: Vec<&TtsExample> = ex.iter().collect();
    let batch = TrainingBatch::collate(&refs, &ProsodyStats::default(), DType::F64, 0, 0).unwrap();
    let out = m.forward(&batch).unwrap();
    let l = m.loss(&out, &batch).unwrap().values().unwrap();
    assert!((l[4] - (l[0] + l[1] + l[2] + l[3])).abs() < 1e-12);
    assert!(l.iter().all(|v| *v > 0.0));

    let mut perfect = out.clone();
    perfect.mel = batch.mel.clone();
    perfect.predictions.pitch = batch.pitch.clone();
    perfect.predictions.energy = batch.energy.clone();
    perfect.predictions.log_duration = batch.log_duration.clone();
    let z = m.loss(&perfect, &batch).unwrap().values().unwrap();
    assert!(z.iter().all(|v| *v == 0.0), "{z:?}");
}

#[test]
fn padding_leaves_losses_unchanged() {
    let schemes = [Scheme::Dvec, Scheme::Lookup, Scheme::Gst];
    let (m, _) = model(&schemes, DType::F64, 6);
    let ex = toy_examples();
    let refs: Vec<&TtsExample> = ex.iter().collect();
    let stats = ProsodyStats::from_targets(ex.iter().map(|e| &e.targets));
    let base = TrainingBatch::collate(&refs, &stats, DType::F64, 0, 0).unwrap();
    let l0 = m.loss(&m.forward(&base).unwrap(), &base).unwrap().values().unwrap();
    for (xp, xf) in [(3, 0), (0, 4), (5, 7)] {
        let padded = TrainingBatch::collate(&refs, &stats, DType::F64, xp, xf).unwrap();
        let l1 = m.loss(&m.forward(&padded).unwrap(), &padded).unwrap().values().unwrap();
        for (a, b) in l0.iter().zip(&l1) {
            assert!((a - b).abs() < 1e-6, "{l0:?} vs {l1:?}");
        }
    }
}

/// Five-point central-difference check of d(total loss)/d(param) on a few entries.
fn gradient_check(m: &AcousticModel, vs: &VarStore, batch: &TrainingBatch, names: &[&str]) {
    let total = |m: &AcousticModel| m.loss(&m.forward(batch).unwrap(), batch).unwrap().total;
    let grads = total(m).backward().unwrap();
    for name in names {
        let var = vs.get(name).unwrap_or_else(|| panic!("no parameter {name}")).clone();
        let g = grads
            .get(var.as_tensor())
            .unwrap_or_else(|| panic!("{name} has no gradient"));
        let g = g.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let shape = var.as_tensor().dims().to_vec();
        let mut checked = 0;
        for i in [0, base.len() / 3, base.len() / 2, base.len() - 1] {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                var.set(&Tensor::from_vec(p, shape.as_slice(), &Device::Cpu).unwrap())
                    .unwrap();
                total(m).to_scalar::<f64>().unwrap()
            };
            let h = 1e-4;
            let numeric = (eval(-2.0 * h) - 8.0 * eval(-h) + 8.0 * eval(h) - eval(2.0 * h)) / (12.0 * h);
            var.set(&Tensor::from_vec(base.clone(), shape.as_slice(), &Device::Cpu).unwrap())
                .unwrap();
            let scale = g[i].abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            checked += 1;
            let rel = (g[i] - numeric).abs() / scale;
            assert!(rel < 1e-4, "{name}[{i}]: analytic {} numeric {numeric} rel {rel}", g[i]);
        }
        assert!(checked > 0, "{name}: all probed gradients vanish");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let schemes = [Scheme::Dvec, Scheme::Lookup, Scheme::Gst];
    let (m, vs) = model(&schemes, DType::F64, 7);
    let ex = [example("u1", "a", vec![1, 3], vec![2, 3], 0.0)];
    let refs: Vec<&TtsExample> = ex.iter().collect();
    let batch = TrainingBatch::collate(&refs, &ProsodyStats::default(), DType::F64, 0, 0).unwrap();
    gradient_check(
        &m,
        &vs,
        &batch,
        &[
            "proj_dvec.first.weight",
            "proj_lookup.second.weight",
            "proj_gst.first.bias",
            "pitch.out.weight",
            "pitch.conv1.weight",
            "energy.conv2.weight",
            "duration.out.bias",
            "duration.conv1.weight",
            "gst.tokens",
            "gst.ref0.weight",
            "lookup.table",
        ],
    );
}

fn corpus_examples(n_spk: usize, utts: usize) -> (Vec<TtsExample>, usize) {
    let corpus = generate_synthetic(&SyntheticSpec::new(n_spk, utts, 11)).unwrap();
    let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    (
        prepare_examples(&corpus, &fx, &BTreeMap::new()).unwrap(),
        corpus.phoneme_vocab.len(),
    )
}

fn short_run(schemes: &[Scheme], steps: usize, seed: u64) -> (clonetts_core::tts::TrainOutcome, Vec<TtsExample>) {
    let (ex, vocab) = corpus_examples(2, 3);
    let h = model_header(&ex, vocab, &tiny_config(), schemes, &FeatureConfig::default()).unwrap();
    let cfg = TrainConfig {
        steps,
        batch: 4,
        lr: 3e-3,
        warmup: 5,
        seed,
        ..TrainConfig::default()
    };
    (train(&ex, h, &cfg).unwrap(), ex)
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (a, _) = short_run(&[Scheme::Lookup, Scheme::Gst], 40, 1);
    let (b, _) = short_run(&[Scheme::Lookup, Scheme::Gst], 40, 1);
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.checksum().unwrap(), b.model.checksum().unwrap());
    let first = a.log.first().unwrap().total;
    let last = a.log.last().unwrap().total;
    assert!(last < first, "{first} -> {last}");
    let (c, _) = short_run(&[Scheme::Lookup, Scheme::Gst], 40, 2);
    assert_ne!(a.log, c.log);

    let table = a.model.model.table().unwrap();
    assert_ne!(
        table.lookup("spk00").unwrap().vector,
        table.lookup("spk01").unwrap().vector
    );
}

#[test]
fn training_requires_encoders_and_schemes() {
    let (ex, vocab) = corpus_examples(2, 2);
    let fc = FeatureConfig::default();
    assert!(matches!(
        model_header(&ex, vocab, &tiny_config(), &[Scheme::Vc], &fc),
        Err(Error::MissingEncoder(Scheme::Vc))
    ));
    assert!(matches!(
        model_header(&ex, vocab, &tiny_config(), &[], &fc),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (out, ex) = short_run(&[Scheme::Lookup, Scheme::Gst], 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    out.model.save(&p1).unwrap();
    let loaded = TrainedModel::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.model.header(), out.model.model.header());

    let m = &out.model.model;
    let refs = [ex[0].mel.clone()];
    let reps = m.enroll(&BTreeMap::new(), Some("spk00"), &refs).unwrap();
    let a = m.synthesize(&ex[0].phonemes, &reps).unwrap();
    let b = loaded.model.synthesize(&ex[0].phonemes, &reps).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synthesis_requires_every_active_representation() {
    let (out, ex) = short_run(&[Scheme::Lookup, Scheme::Gst], 2, 5);
    let m = &out.model.model;
    let mut reps = m.enroll(&BTreeMap::new(), Some("spk01"), &[ex[0].mel.clone()]).unwrap();
    reps.remove(&Scheme::Gst);
    assert!(matches!(
        m.synthesize(&ex[0].phonemes, &reps),
        Err(Error::MissingRepresentation(Scheme::Gst))
    ));
    assert!(matches!(
        m.enroll(&BTreeMap::new(), Some("stranger"), &[ex[0].mel.clone()]),
        Err(Error::UnknownSpeaker(_))
    ));
}

#[test]
fn predictions_depend_on_the_speaker_representation() {
    let (out, ex) = short_run(&[Scheme::Lookup], 30, 6);
    let m = &out.model.model;
    let base = m.lookup("spk00").unwrap();
    let reps: BTreeMap<_, _> = [(Scheme::Lookup, base.clone())].into_iter().collect();
    let a = m.synthesize_detailed(&ex[0].phonemes, &reps).unwrap();
    let mut moved = base.clone();
    for v in moved.vector.iter_mut().take(16) {
        *v += 1e-2;
    }
    let reps2: BTreeMap<_, _> = [(Scheme::Lookup, moved)].into_iter().collect();
    let b = m.synthesize_detailed(&ex[0].phonemes, &reps2).unwrap();
    let dp: f32 = a.pitch.iter().zip(&b.pitch).map(|(x, y)| (x - y).abs()).sum();
    let de: f32 = a.energy.iter().zip(&b.energy).map(|(x, y)| (x - y).abs()).sum();
    assert!(dp > 0.0 && de > 0.0, "pitch {dp} energy {de}");
}

#[test]
fn mel_distance_requires_equal_shapes() {
    let a = MelSpectrogram::new(Array2::zeros((3, 80)), 256, 22050).unwrap();
    let b = MelSpectrogram::new(Array2::ones((3, 80)), 256, 22050).unwrap();
    assert_eq!(mel_l1(&a, &b).unwrap(), 1.0);
    let c = MelSpectrogram::new(Array2::zeros((4, 80)), 256, 22050).unwrap();
    assert!(mel_l1(&a, &c).is_err());
}

#[test]
fn aligned_distance_resamples_time() {
    // a ramp in time stretched to a different length stays the same ramp
    let ramp = |frames: usize| {
        let v = Array2::from_shape_fn((frames, 80), |(t, m)| t as f32 / (frames - 1) as f32 + m as f32);
        MelSpectrogram::new(v, 256, 22050).unwrap()
    };
    assert!(mel_l1_aligned(&ramp(10), &ramp(37)).unwrap() < 1e-6);
    assert!(mel_l1_aligned(&ramp(37), &ramp(10)).unwrap() < 1e-6);
    let a = ramp(5);
    assert_eq!(mel_l1_aligned(&a, &a).unwrap(), mel_l1(&a, &a).unwrap());
    let shifted = MelSpectrogram::new(a.values.mapv(|v| v + 0.5), 256, 22050).unwrap();
    assert!((mel_l1_aligned(&a, &shifted).unwrap() - 0.5).abs() < 1e-6);
    let narrow = MelSpectrogram::new(Array2::zeros((5, 40)), 256, 22050).unwrap();
    assert!(mel_l1_aligned(&a, &narrow).is_err());
}
