use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

/// Center-padded STFT with a periodic Hann window. Frame `t` is centered on
/// sample `t * hop`; samples outside the signal read as zero.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f32>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

impl Stft {
    pub fn new(n_fft: usize, win: usize, hop: usize) -> Self {
        let mut window = vec![0f32; n_fft];
        let offset = (n_fft - win) / 2;
        for i in 0..win {
            let w = 0.5 - 0.5 * (2.0 * std::f32::consts::PI * i as f32 / win as f32).cos();
            window[offset + i] = w;
        }
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    pub fn forward(&self, signal: &[f32]) -> Array2<Complex32> {
        let frames = self.frames(signal.len());
        let bins = self.n_bins();
        let half = (self.n_fft / 2) as isize;
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex32::default(); self.n_fft];
        for t in 0..frames {
            let start = (t * self.hop) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex32::new(x * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, v) in buf[..bins].iter().enumerate() {
                out[[t, k]] = *v;
            }
        }
        out
    }

    pub fn magnitude(&self, signal: &[f32]) -> Array2<f32> {
        self.forward(signal).mapv(|c| c.norm())
    }

    /// Weighted overlap-add inverse; returns `frames * hop` samples.
    pub fn inverse(&self, spec: &Array2<Complex32>) -> Vec<f32> {
        let frames = spec.nrows();
        let half = self.n_fft / 2;
        let padded_len = frames * self.hop + self.n_fft;
        let mut acc = vec![0f32; padded_len];
        let mut norm = vec![0f32; padded_len];
        let mut buf = vec![Complex32::default(); self.n_fft];
        let scale = 1.0 / self.n_fft as f32;
        for t in 0..frames {
            for k in 0..self.n_bins() {
                buf[k] = spec[[t, k]];
            }
            for k in self.n_bins()..self.n_fft {
                buf[k] = spec[[t, self.n_fft - k]].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                acc[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        (0..frames * self.hop)
            .map(|n| {
                let j = n + half;
                if norm[j] > 1e-8 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f32) -> f32 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f32) -> f32 {
    700.0 * (10f32.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, `n_mels x (n_fft/2 + 1)`, peak height 1.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f32, fmax: f32) -> Array2<f32> {
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f32> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f32 / (n_mels + 1) as f32))
        .collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f32 * sample_rate as f32 / n_fft as f32;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}
