//! Binary mel cache: `MEL1` magic, u32 frames, u32 n_mels, u32 hop,
//! u32 sample rate, then little-endian f32 values row-major.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::MelSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MEL1";

pub fn cache_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.mel"))
}

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + 4 * mel.values.len());
    bytes.extend_from_slice(MAGIC);
    for v in [mel.frames(), mel.n_mels(), mel.hop, mel.sample_rate as usize] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in mel.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a mel cache file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (frames, n_mels, hop, sr) = (word(0), word(1), word(2), word(3));
    if bytes.len() != 20 + 4 * frames * n_mels {
        return Err(corrupt("payload length does not match header"));
    }
    let values: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((frames, n_mels), values).map_err(|e| corrupt(&e.to_string()))?;
    MelSpectrogram::new(values, hop, sr as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array2::from_shape_fn((7, 80), |(t, m)| (t * 80 + m) as f32 * 0.01 - 3.0);
        let mel = MelSpectrogram::new(values, 256, 22050).unwrap();
        let p = cache_path(dir.path(), "utt1");
        write_mel(&p, &mel).unwrap();
        assert_eq!(read_mel(&p).unwrap(), mel);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mel");
        fs::write(&p, b"nope").unwrap();
        assert!(read_mel(&p).is_err());
    }
}
