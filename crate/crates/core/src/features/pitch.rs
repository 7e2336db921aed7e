//! Frame-level F0 by normalized autocorrelation.

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

use super::FeatureConfig;
use crate::error::{Error, Result};

/// Local maxima within this fraction of the global best count as candidates;
/// the shortest such lag wins, which suppresses sub-octave picks.
const OCTAVE_TOLERANCE: f32 = 0.85;
const SILENCE_POWER: f32 = 1e-10;

/// Per-frame F0 in Hz, 0 for unvoiced frames. Frames follow the mel framing.
pub fn extract_f0(waveform: &[f32], cfg: &FeatureConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    if cfg.sample_rate as f32 <= 2.0 * cfg.f0_max {
        return Err(Error::InvalidConfig(format!(
            "sample rate {} Hz is below twice f0_max {} Hz",
            cfg.sample_rate, cfg.f0_max
        )));
    }
    if !(cfg.f0_min > 0.0 && cfg.f0_min < cfg.f0_max) {
        return Err(Error::InvalidConfig("need 0 < f0_min < f0_max".into()));
    }
    if waveform.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    let n = cfg.n_fft;
    let sr = cfg.sample_rate as f32;
    let lag_min = ((sr / cfg.f0_max).floor() as usize).max(2);
    let lag_max = (sr / cfg.f0_min).ceil() as usize;
    if lag_max + 2 >= n / 2 * 2 {
        return Err(Error::InvalidConfig(format!(
            "n_fft {n} too short for f0_min {} Hz",
            cfg.f0_min
        )));
    }

    let fft_len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f32>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);

    let frames = waveform.len().div_ceil(cfg.hop);
    let half = (n / 2) as isize;
    let mut frame = vec![0f32; n];
    let mut prefix = vec![0f32; n + 1];
    let mut buf = vec![Complex32::default(); fft_len];
    let mut f0 = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = (t * cfg.hop) as isize - half;
        for (i, slot) in frame.iter_mut().enumerate() {
            let idx = start + i as isize;
            *slot = if idx >= 0 && (idx as usize) < waveform.len() {
                waveform[idx as usize]
            } else {
                0.0
            };
        }
        for i in 0..n {
            prefix[i + 1] = prefix[i] + frame[i] * frame[i];
        }
        if prefix[n] / (n as f32) < SILENCE_POWER {
            f0.push(0.0);
            continue;
        }

        buf.iter_mut().for_each(|c| *c = Complex32::default());
        for i in 0..n {
            buf[i].re = frame[i];
        }
        fwd.process(&mut buf);
        buf.iter_mut().for_each(|c| *c = Complex32::new(c.norm_sqr(), 0.0));
        inv.process(&mut buf);
        let scale = 1.0 / fft_len as f32;

        let nacf = |lag: usize| -> f32 {
            let e0 = prefix[n - lag];
            let e1 = prefix[n] - prefix[lag];
            let denom = (e0 * e1).sqrt();
            if denom <= 0.0 {
                0.0
            } else {
                buf[lag].re * scale / denom
            }
        };
        let r: Vec<f32> = (lag_min - 1..=lag_max + 1).map(nacf).collect();
        // r[i] is the value at lag lag_min - 1 + i
        let best = r[1..r.len() - 1].iter().cloned().fold(f32::MIN, f32::max);
        if best < cfg.voicing_threshold {
            f0.push(0.0);
            continue;
        }
        let pick = (1..r.len() - 1)
            .find(|&i| r[i] >= OCTAVE_TOLERANCE * best && r[i] >= r[i - 1] && r[i] >= r[i + 1])
            .unwrap_or_else(|| {
                (1..r.len() - 1)
                    .max_by(|&a, &b| r[a].total_cmp(&r[b]))
                    .expect("non-empty lag range")
            });
        let (a, b, c) = (r[pick - 1], r[pick], r[pick + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let lag = (lag_min - 1 + pick) as f32 + shift;
        f0.push((sr / lag).clamp(cfg.f0_min, cfg.f0_max));
    }
    Ok(f0)
}
