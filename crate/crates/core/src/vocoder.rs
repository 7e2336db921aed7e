//! Griffin-Lim phase reconstruction from log-mel spectrograms.

use nalgebra::DMatrix;
use ndarray::Array2;
use rustfft::num_complex::Complex32;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MelSpectrogram, LOG_FLOOR};

pub const DEFAULT_ITERATIONS: usize = 60;

/// Linear-magnitude estimate: the floor is subtracted from the exponentiated
/// mel and the result mapped through the filterbank pseudo-inverse, clamped
/// at zero.
pub fn mel_to_magnitude(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Result<Array2<f32>> {
    check_header(mel, cfg)?;
    let fb = cfg.filterbank();
    let (n_mels, bins) = fb.dim();
    let fb_t = DMatrix::<f64>::from_fn(bins, n_mels, |k, m| fb[[m, k]] as f64);
    let pinv = fb_t
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidConfig(format!("filterbank pseudo-inverse: {e}")))?;
    let frames = mel.frames();
    let mut mag = Array2::<f32>::zeros((frames, bins));
    for t in 0..frames {
        for k in 0..bins {
            let mut acc = 0f64;
            for m in 0..n_mels {
                let lin = ((mel.values[[t, m]] as f64).exp() - LOG_FLOOR as f64).max(0.0);
                acc += lin * pinv[(m, k)];
            }
            mag[[t, k]] = acc.max(0.0) as f32;
        }
    }
    Ok(mag)
}

fn check_header(mel: &MelSpectrogram, cfg: &FeatureConfig) -> Result<()> {
    cfg.validate()?;
    if mel.hop != cfg.hop || mel.sample_rate != cfg.sample_rate || mel.n_mels() != cfg.n_mels {
        return Err(Error::InvalidConfig(format!(
            "mel ({} bands, hop {}, {} Hz) does not match the feature config ({} bands, hop {}, {} Hz)",
            mel.n_mels(),
            mel.hop,
            mel.sample_rate,
            cfg.n_mels,
            cfg.hop,
            cfg.sample_rate
        )));
    }
    Ok(())
}

/// Iterative phase recovery starting from zero phase. With `iterations == 0`
/// this is the zero-phase inverse. Returns `frames * hop` samples.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &FeatureConfig, iterations: usize) -> Result<Vec<f32>> {
    let mag = mel_to_magnitude(mel, cfg)?;
    let stft = cfg.stft();
    let mut spec = mag.mapv(|m| Complex32::new(m, 0.0));
    for _ in 0..iterations {
        let signal = stft.inverse(&spec);
        let rebuilt = stft.forward(&signal);
        for ((s, r), &m) in spec.iter_mut().zip(rebuilt.iter()).zip(mag.iter()) {
            let n = r.norm();
            *s = if n > 1e-12 { r * (m / n) } else { Complex32::new(m, 0.0) };
        }
    }
    Ok(stft.inverse(&spec))
}
