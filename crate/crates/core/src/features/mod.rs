//! Log-mel spectrograms, frame-level F0/energy and phoneme-level prosody
//! targets.

mod cache;
mod pitch;
mod stft;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};

pub use cache::{cache_path, read_mel, write_mel};
pub use pitch::extract_f0;
pub use stft::{hz_to_mel, mel_filterbank, mel_to_hz, Stft};

/// Floor applied to mel energies before the log.
pub const LOG_FLOOR: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub f0_min: f32,
    pub f0_max: f32,
    pub voicing_threshold: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 22050,
            n_fft: 1024,
            win: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            f0_min: 60.0,
            f0_max: 500.0,
            voicing_threshold: 0.3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hop == 0 || self.hop > self.win || self.win > self.n_fft {
            return bad(format!(
                "need 0 < hop <= win <= n_fft, got hop {} win {} n_fft {}",
                self.hop, self.win, self.n_fft
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f32 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= sample_rate/2, got {}..{}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    pub fn stft(&self) -> Stft {
        Stft::new(self.n_fft, self.win, self.hop)
    }

    pub fn filterbank(&self) -> Array2<f32> {
        mel_filterbank(self.sample_rate, self.n_fft, self.n_mels, self.fmin, self.fmax)
    }
}

/// `frames x n_mels` natural-log mel magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f32>, hop: usize, sample_rate: u32) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("mel spectrogram"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("mel spectrogram has non-finite values".into()));
        }
        Ok(MelSpectrogram {
            values,
            hop,
            sample_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Row-major copy of the values.
    pub fn to_vec(&self) -> Vec<f32> {
        self.values.iter().cloned().collect()
    }
}

/// Precomputed analysis state, reusable across utterances.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    stft: Stft,
    filterbank: Array2<f32>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FeatureExtractor {
            stft: cfg.stft(),
            filterbank: cfg.filterbank(),
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Array2<f32> {
        &self.filterbank
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn mel(&self, waveform: &[f32]) -> Result<MelSpectrogram> {
        if waveform.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        let mag = self.stft.magnitude(waveform);
        let mel = mag.dot(&self.filterbank.t()).mapv(|v| v.max(LOG_FLOOR).ln());
        MelSpectrogram::new(mel, self.cfg.hop, self.cfg.sample_rate)
    }

    pub fn energy(&self, waveform: &[f32]) -> Result<Vec<f32>> {
        if waveform.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        let mag = self.stft.magnitude(waveform);
        Ok(mag
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f32>().sqrt())
            .collect())
    }

    pub fn frame_prosody(&self, waveform: &[f32]) -> Result<FrameProsody> {
        Ok(FrameProsody {
            f0: extract_f0(waveform, &self.cfg)?,
            energy: self.energy(waveform)?,
        })
    }

    /// Mel plus phoneme-level prosody targets for a corpus utterance.
    pub fn analyze(&self, utt: &Utterance) -> Result<(MelSpectrogram, ProsodyTargets)> {
        if utt.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "utterance {} is {} Hz, features expect {} Hz",
                utt.id, utt.sample_rate, self.cfg.sample_rate
            )));
        }
        utt.validate(self.cfg.hop)?;
        let mel = self.mel(&utt.waveform)?;
        let frame = self.frame_prosody(&utt.waveform)?;
        let targets = ProsodyTargets {
            pitch: phoneme_average_voiced(&frame.f0, &utt.durations)?,
            energy: phoneme_average(&frame.energy, &utt.durations)?,
            duration: utt.durations.clone(),
        };
        Ok((mel, targets))
    }
}

pub fn compute_mel(waveform: &[f32], cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    FeatureExtractor::new(cfg.clone())?.mel(waveform)
}

/// L2 norm of each magnitude-STFT frame.
pub fn compute_energy(waveform: &[f32], cfg: &FeatureConfig) -> Result<Vec<f32>> {
    FeatureExtractor::new(cfg.clone())?.energy(waveform)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameProsody {
    /// Hz, 0 = unvoiced.
    pub f0: Vec<f32>,
    pub energy: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTargets {
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
    pub duration: Vec<u32>,
}

impl ProsodyTargets {
    pub fn len(&self) -> usize {
        self.duration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duration.is_empty()
    }
}

fn check_alignment(frames: usize, durations: &[u32]) -> Result<()> {
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    if total != frames {
        return Err(Error::LengthMismatch(format!(
            "durations sum to {total} but there are {frames} frames"
        )));
    }
    Ok(())
}

/// Mean of each phoneme's frames; zero-duration phonemes map to 0.
pub fn phoneme_average(values: &[f32], durations: &[u32]) -> Result<Vec<f32>> {
    check_alignment(values.len(), durations)?;
    let mut start = 0;
    Ok(durations
        .iter()
        .map(|&d| {
            let seg = &values[start..start + d as usize];
            start += d as usize;
            if seg.is_empty() {
                0.0
            } else {
                seg.iter().sum::<f32>() / seg.len() as f32
            }
        })
        .collect())
}

/// Like [`phoneme_average`] but over voiced (non-zero) frames only.
pub fn phoneme_average_voiced(f0: &[f32], durations: &[u32]) -> Result<Vec<f32>> {
    check_alignment(f0.len(), durations)?;
    let mut start = 0;
    Ok(durations
        .iter()
        .map(|&d| {
            let seg = &f0[start..start + d as usize];
            start += d as usize;
            let voiced: Vec<f32> = seg.iter().cloned().filter(|&v| v > 0.0).collect();
            if voiced.is_empty() {
                0.0
            } else {
                voiced.iter().sum::<f32>() / voiced.len() as f32
            }
        })
        .collect())
}

/// Repeats each phoneme value `duration` times.
pub fn expand(values: &[f32], durations: &[u32]) -> Vec<f32> {
    values
        .iter()
        .zip(durations)
        .flat_map(|(&v, &d)| std::iter::repeat_n(v, d as usize))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f32, n: usize, sr: u32) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin())
            .collect()
    }

    #[test]
    fn frame_count_is_ceil() {
        let cfg = FeatureConfig::default();
        let x = sine(200.0, 22050, 22050);
        let mel = compute_mel(&x, &cfg).unwrap();
        assert_eq!(mel.frames(), 87);
        assert_eq!(mel.n_mels(), 80);
        assert_eq!(extract_f0(&x, &cfg).unwrap().len(), 87);
        assert_eq!(compute_energy(&x, &cfg).unwrap().len(), 87);
    }

    #[test]
    fn silence_hits_the_floor() {
        let mel = compute_mel(&[0.0; 3000], &FeatureConfig::default()).unwrap();
        assert!(mel.values.iter().all(|&v| v == LOG_FLOOR.ln()));
        let e = compute_energy(&[0.0; 3000], &FeatureConfig::default()).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_in_its_band() {
        let cfg = FeatureConfig::default();
        let mel = compute_mel(&sine(440.0, 8192, cfg.sample_rate), &cfg).unwrap();
        // band centers straight from the HTK formula
        let top = 2595.0 * (1.0 + cfg.fmax as f64 / 700.0).log10();
        let centers: Vec<f64> = (1..=cfg.n_mels)
            .map(|i| {
                let m = top * i as f64 / (cfg.n_mels + 1) as f64;
                700.0 * (10f64.powf(m / 2595.0) - 1.0)
            })
            .collect();
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        let row = mel.values.row(mel.frames() / 2);
        let got = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(got, expected);
    }

    #[test]
    fn impulse_energy_localized() {
        let cfg = FeatureConfig::default();
        let mut x = vec![0f32; 4096];
        x[2048] = 1.0;
        let e = compute_energy(&x, &cfg).unwrap();
        // direct evaluation: the window covers sample 2048 for frames whose
        // center lies within n_fft/2 of it; energy = window value there
        let stft = cfg.stft();
        for (t, &v) in e.iter().enumerate() {
            let offset = 2048isize - (t * cfg.hop) as isize + (cfg.n_fft / 2) as isize;
            let w = if (0..cfg.n_fft as isize).contains(&offset) {
                let i = offset as f32;
                0.5 - 0.5 * (2.0 * std::f32::consts::PI * i / cfg.win as f32).cos()
            } else {
                0.0
            };
            // a windowed impulse has flat magnitude w over all bins
            let expected = w * (stft.n_bins() as f32).sqrt();
            assert!(
                (v - expected).abs() < 1e-4 * expected.max(1.0),
                "frame {t}: {v} vs {expected}"
            );
        }
        let peak = e.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 8);
    }

    #[test]
    fn empty_and_bad_config() {
        let cfg = FeatureConfig::default();
        assert!(matches!(compute_mel(&[], &cfg), Err(Error::EmptyInput(_))));
        let bad = FeatureConfig {
            hop: 2048,
            ..FeatureConfig::default()
        };
        assert!(matches!(compute_mel(&[0.0; 10], &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn phoneme_averages() {
        assert_eq!(
            phoneme_average(&[100.0, 110.0, 120.0, 130.0], &[2, 2]).unwrap(),
            vec![105.0, 125.0]
        );
        assert_eq!(
            phoneme_average_voiced(&[0.0, 0.0, 200.0, 220.0], &[2, 2]).unwrap(),
            vec![0.0, 210.0]
        );
        assert_eq!(phoneme_average(&[1.0, 2.0, 3.0, 6.0], &[0, 4]).unwrap(), vec![0.0, 3.0]);
        assert!(phoneme_average(&[1.0, 2.0], &[1]).is_err());
    }

    proptest! {
        #[test]
        fn energy_scales_linearly(seed in 0u64..1000, c in 0.01f32..50.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f32> = (0..1500).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let scaled: Vec<f32> = x.iter().map(|v| v * c).collect();
            let cfg = FeatureConfig::default();
            let a = compute_energy(&x, &cfg).unwrap();
            let b = compute_energy(&scaled, &cfg).unwrap();
            for (ea, eb) in a.iter().zip(&b) {
                let rel = ((eb - c * ea) / (c * ea).max(1e-12)).abs();
                prop_assert!(rel < 1e-5, "rel {}", rel);
            }
        }

        #[test]
        fn average_expand_idempotent(vals in proptest::collection::vec(0f32..500.0, 1..40),
                                     seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // random partition of the frames into phonemes (some empty)
            let mut durations = Vec::new();
            let mut left = vals.len() as u32;
            while left > 0 {
                let d = rng.random_range(0..=left.min(5));
                durations.push(d);
                left -= d;
            }
            let once = phoneme_average(&vals, &durations).unwrap();
            let again = phoneme_average(&expand(&once, &durations), &durations).unwrap();
            for (a, b) in once.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-3 * a.abs().max(1.0));
            }
        }
    }
}
