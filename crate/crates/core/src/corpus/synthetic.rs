//! Deterministic parametric voices standing in for recorded speech.
//!
//! Every synthetic speaker is a harmonic source with its own base F0, formant
//! scale, spectral tilt, speaking rate and level. Utterance `j` of every
//! speaker reads the same scripted phoneme sequence, so the corpus is
//! parallel across speakers. Voices depend only on the speaker index; `seed`
//! drives the script and the noise, so two seeds give disjoint recordings of
//! the same voices.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Utterance};
use crate::error::{Error, Result};

pub const PHONEME_SYMBOLS: [&str; 12] = ["a", "e", "i", "o", "u", "@", "m", "n", "l", "r", "s", "f"];

/// Formant centers (Hz) and relative gains; `None` marks an unvoiced phoneme.
const FORMANTS: [Option<[(f32, f32); 3]>; 12] = [
    Some([(730.0, 1.0), (1090.0, 0.6), (2440.0, 0.3)]),
    Some([(530.0, 1.0), (1840.0, 0.6), (2480.0, 0.3)]),
    Some([(270.0, 1.0), (2290.0, 0.5), (3010.0, 0.35)]),
    Some([(570.0, 1.0), (840.0, 0.7), (2410.0, 0.2)]),
    Some([(300.0, 1.0), (870.0, 0.5), (2240.0, 0.15)]),
    Some([(500.0, 1.0), (1500.0, 0.6), (2500.0, 0.3)]),
    Some([(250.0, 1.0), (1200.0, 0.2), (2200.0, 0.1)]),
    Some([(250.0, 1.0), (1700.0, 0.25), (2600.0, 0.15)]),
    Some([(360.0, 1.0), (1300.0, 0.5), (2700.0, 0.25)]),
    Some([(420.0, 1.0), (1300.0, 0.55), (1600.0, 0.45)]),
    None,
    None,
];
const FORMANT_BANDWIDTHS: [f32; 3] = [90.0, 120.0, 160.0];
const HARMONIC_CEILING_HZ: f32 = 5500.0;
const UNVOICED_LEVEL: f32 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub hop: usize,
    /// Base F0 of the first and last speaker; the rest are evenly spaced.
    pub f0_low: f32,
    pub f0_high: f32,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_duration: u32,
    pub max_duration: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_speakers: 4,
            utts_per_speaker: 8,
            seed: 0,
            sample_rate: 22050,
            hop: 256,
            f0_low: 90.0,
            f0_high: 300.0,
            min_phonemes: 5,
            max_phonemes: 9,
            min_duration: 3,
            max_duration: 8,
        }
    }
}

impl SyntheticSpec {
    pub fn new(n_speakers: usize, utts_per_speaker: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_speakers,
            utts_per_speaker,
            seed,
            ..Default::default()
        }
    }

    /// Spacing between consecutive speakers' base F0.
    pub fn f0_separation(&self) -> f32 {
        (self.f0_high - self.f0_low) / (self.n_speakers.max(2) - 1) as f32
    }

    pub fn speaker_id(index: usize) -> String {
        format!("spk{index:02}")
    }

    /// The parametric voice of speaker `index`. Independent of `seed`.
    pub fn voice(&self, index: usize) -> Voice {
        let frac = |x: f32| x - x.floor();
        let i = index as f32;
        Voice {
            base_f0: self.f0_low + i * self.f0_separation(),
            formant_scale: 0.85 + 0.3 * frac(0.5 + i * 0.618_034),
            tilt_db_per_khz: -(2.0 + 4.0 * frac(0.25 + i * 0.414_213_6)),
            rate: 0.8 + 0.4 * frac(0.3 + i * 0.732_050_8),
            level: 0.2 + 0.1 * frac(0.7 + i * 0.236_068),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_speakers < 2 {
            return bad("synthetic corpus needs at least 2 speakers");
        }
        if self.utts_per_speaker < 2 {
            return bad("synthetic corpus needs at least 2 utterances per speaker");
        }
        if self.sample_rate == 0 || self.hop == 0 {
            return bad("sample rate and hop must be positive");
        }
        if !(self.f0_low > 0.0 && self.f0_high >= self.f0_low) {
            return bad("need 0 < f0_low <= f0_high");
        }
        if self.f0_high * 2.0 > self.sample_rate as f32 / 2.0 {
            return bad("f0_high too close to Nyquist");
        }
        if self.min_phonemes == 0 || self.max_phonemes < self.min_phonemes {
            return bad("need 1 <= min_phonemes <= max_phonemes");
        }
        if self.min_duration == 0 || self.max_duration < self.min_duration {
            return bad("need 1 <= min_duration <= max_duration");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub base_f0: f32,
    pub formant_scale: f32,
    pub tilt_db_per_khz: f32,
    /// Multiplies scripted phoneme durations.
    pub rate: f32,
    pub level: f32,
}

struct ScriptLine {
    phonemes: Vec<u32>,
    durations: Vec<u32>,
    /// Per-phoneme pitch offset in semitones.
    intonation: Vec<f32>,
    /// Per-phoneme gain offset in dB.
    accent: Vec<f32>,
}

fn script(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<ScriptLine> {
    (0..spec.utts_per_speaker)
        .map(|_| {
            let n = rng.random_range(spec.min_phonemes..=spec.max_phonemes);
            let phonemes = (0..n)
                .map(|_| rng.random_range(0..PHONEME_SYMBOLS.len() as u32))
                .collect();
            let durations = (0..n)
                .map(|_| rng.random_range(spec.min_duration..=spec.max_duration))
                .collect();
            let intonation = (0..n).map(|_| rng.random_range(-1.5f32..1.5)).collect();
            let accent = (0..n).map(|_| rng.random_range(-3.0f32..3.0)).collect();
            ScriptLine {
                phonemes,
                durations,
                intonation,
                accent,
            }
        })
        .collect()
}

/// Builds the corpus; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lines = script(spec, &mut rng);

    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utts_per_speaker);
    for speaker in 0..spec.n_speakers {
        let voice = spec.voice(speaker);
        for (j, line) in lines.iter().enumerate() {
            let noise_seed = spec
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(((speaker as u64) << 32) | j as u64);
            utterances.push(render(spec, &voice, speaker, j, line, noise_seed));
        }
    }
    let vocab = PHONEME_SYMBOLS.iter().map(|s| s.to_string()).collect();
    Corpus::new(utterances, vocab)
}

fn render(
    spec: &SyntheticSpec,
    voice: &Voice,
    speaker: usize,
    line_index: usize,
    line: &ScriptLine,
    noise_seed: u64,
) -> Utterance {
    let sr = spec.sample_rate as f32;
    let durations: Vec<u32> = line
        .durations
        .iter()
        .map(|&d| ((d as f32 * voice.rate).round() as u32).max(1))
        .collect();
    let total: usize = durations.iter().map(|&d| d as usize).sum::<usize>() * spec.hop;
    let mut wave = vec![0f32; total];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);

    let mut phase = 0f32;
    let mut start = 0usize;
    let mut prev_noise = 0f32;
    for (p, (&ph, &dur)) in line.phonemes.iter().zip(&durations).enumerate() {
        let end = start + dur as usize * spec.hop;
        let gain = voice.level * 10f32.powf(line.accent[p] / 20.0);
        match FORMANTS[ph as usize] {
            Some(formants) => {
                let f0 = voice.base_f0 * 2f32.powf(line.intonation[p] / 12.0);
                let amps = harmonic_amplitudes(f0, &formants, voice, sr);
                let step = 2.0 * PI * f0 / sr;
                for sample in &mut wave[start..end] {
                    let mut acc = 0f32;
                    for (h, &a) in amps.iter().enumerate() {
                        acc += a * ((h + 1) as f32 * phase).sin();
                    }
                    *sample = gain * acc;
                    phase = (phase + step) % (2.0 * PI);
                }
            }
            None => {
                // "s" is differenced (brighter) noise, "f" is flat noise
                let bright = PHONEME_SYMBOLS[ph as usize] == "s";
                for sample in &mut wave[start..end] {
                    let n: f32 = StandardNormal.sample(&mut noise_rng);
                    let v = if bright { (n - prev_noise) * 0.7 } else { n };
                    prev_noise = n;
                    *sample = UNVOICED_LEVEL * gain / voice.level * v;
                }
            }
        }
        start = end;
    }

    Utterance {
        id: format!("{}_{line_index:04}", SyntheticSpec::speaker_id(speaker)),
        speaker_id: SyntheticSpec::speaker_id(speaker),
        waveform: wave,
        sample_rate: spec.sample_rate,
        phonemes: line.phonemes.clone(),
        durations,
    }
}

/// Harmonic amplitudes under the voice's formant envelope, normalized to unit power.
fn harmonic_amplitudes(f0: f32, formants: &[(f32, f32); 3], voice: &Voice, sr: f32) -> Vec<f32> {
    let ceiling = HARMONIC_CEILING_HZ.min(0.45 * sr);
    let n = (ceiling / f0).floor().max(1.0) as usize;
    let mut amps: Vec<f32> = (1..=n)
        .map(|h| {
            let f = h as f32 * f0;
            let env: f32 = formants
                .iter()
                .zip(FORMANT_BANDWIDTHS)
                .map(|(&(center, g), bw)| {
                    let z = (f - center * voice.formant_scale) / bw;
                    g * (-0.5 * z * z).exp()
                })
                .sum::<f32>()
                + 0.02;
            env * 10f32.powf(voice.tilt_db_per_khz * f / 1000.0 / 20.0)
        })
        .collect();
    let norm = amps.iter().map(|a| a * a).sum::<f32>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    amps
}
