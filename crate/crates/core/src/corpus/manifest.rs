//! Line-delimited manifest: `id|speaker_id|audio_path|phoneme ids|durations`.
//!
//! Audio paths are resolved relative to the manifest's directory. The phoneme
//! vocabulary lives next to the manifest with the extension `vocab`, one
//! symbol per line, line number = id.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Corpus, Utterance};
use crate::error::{Error, Result};

pub fn vocab_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("vocab")
}

/// Reads a manifest and its audio, checking every alignment against `hop`.
pub fn load_manifest(path: &Path, hop: usize) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vocab_file = vocab_path(path);
    let vocab: Vec<String> = fs::read_to_string(&vocab_file)
        .map_err(|e| Error::io(&vocab_file, e))?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let base = path.parent().unwrap_or(Path::new("."));

    let mut utterances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 5 {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let phonemes = parse_ints(fields[3], line_no, "phoneme id")?;
        let durations = parse_ints(fields[4], line_no, "duration")?;
        let audio = base.join(fields[2]);
        let (waveform, sample_rate) = read_wav(&audio)?;
        let utt = Utterance {
            id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            waveform,
            sample_rate,
            phonemes,
            durations,
        };
        utt.validate(hop)?;
        utterances.push(utt);
    }
    Corpus::new(utterances, vocab)
}

/// Writes `corpus` as a manifest plus float WAVs under `<dir>/wavs/`.
pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let wav_dir = dir.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut out = String::new();
    for utt in &corpus.utterances {
        let rel = format!("wavs/{}.wav", utt.id);
        write_wav_f32(&dir.join(&rel), &utt.waveform, utt.sample_rate)?;
        out.push_str(&format!(
            "{}|{}|{}|{}|{}\n",
            utt.id,
            utt.speaker_id,
            rel,
            join(&utt.phonemes),
            join(&utt.durations)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let vocab = vocab_path(path);
    let mut f = fs::File::create(&vocab).map_err(|e| Error::io(&vocab, e))?;
    for sym in &corpus.phoneme_vocab {
        writeln!(f, "{sym}").map_err(|e| Error::io(&vocab, e))?;
    }
    Ok(())
}

fn join(values: &[u32]) -> String {
    values.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ints(field: &str, line: usize, what: &str) -> Result<Vec<u32>> {
    field
        .split_whitespace()
        .map(|tok| {
            tok.parse::<u32>().map_err(|_| Error::Manifest {
                line,
                msg: format!("bad {what} {tok:?}"),
            })
        })
        .collect()
}

pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidConfig(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<Vec<_>, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect()
        }
    }
    .map_err(|e| Error::wav(path, e))?;
    Ok((samples, spec.sample_rate))
}

pub(crate) fn write_wav_f32(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| Error::wav(path, e))?;
    }
    w.finalize().map_err(|e| Error::wav(path, e))
}

/// 16-bit PCM, clipped to [-1, 1].
pub fn write_wav_pcm16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::wav(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(|e| Error::wav(path, e))?;
    }
    w.finalize().map_err(|e| Error::wav(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, rows: &[&str]) -> PathBuf {
        let wav = vec![0.1f32; 600];
        write_wav_f32(&dir.join("a.wav"), &wav, 22050).unwrap();
        write_wav_pcm16(&dir.join("b.wav"), &wav[..512], 22050).unwrap();
        let manifest = dir.join("corpus.txt");
        fs::write(&manifest, rows.join("\n")).unwrap();
        fs::write(vocab_path(&manifest), "a\nb\nc\n").unwrap();
        manifest
    }

    #[test]
    fn loads_two_utterances() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &["u2|spk|b.wav|0 1|1 1", "u1|spk|a.wav|2 0 1|1 1 1"]);
        let corpus = load_manifest(&m, 256).unwrap();
        assert_eq!(corpus.speakers.len(), 1);
        assert_eq!(corpus.utterances.len(), 2);
        assert_eq!(corpus.utterances[0].id, "u1");
        assert_eq!(corpus.phoneme_vocab, vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &[]);
        let err = load_manifest(&m, 256).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn off_by_one_duration_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        // a.wav has 600 samples = 3 frames; durations sum to 4
        let m = write_fixture(dir.path(), &["ok|spk|b.wav|0 1|1 1", "bad|spk|a.wav|0 1|2 2"]);
        match load_manifest(&m, 256).unwrap_err() {
            Error::DurationMismatch { id, durations, frames } => {
                assert_eq!(id, "bad");
                assert_eq!((durations, frames), (4, 3));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_fixture(dir.path(), &["x|spk|a.wav|0 1"]);
        assert!(matches!(load_manifest(&m, 256), Err(Error::Manifest { line: 1, .. })));
        let m = write_fixture(dir.path(), &["x|spk|a.wav|0 q|1 2"]);
        assert!(matches!(load_manifest(&m, 256), Err(Error::Manifest { line: 1, .. })));
        let m = write_fixture(dir.path(), &["x|spk|missing.wav|0 1|1 2"]);
        assert!(matches!(load_manifest(&m, 256), Err(Error::Wav { .. })));
    }

    #[test]
    fn missing_manifest() {
        let err = load_manifest(Path::new("/nonexistent/m.txt"), 256).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
