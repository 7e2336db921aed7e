//! Corpus records, manifest ingestion, few-shot speaker splits and the
//! synthetic mini-corpus generator.

mod manifest;
mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_manifest, read_wav, save_manifest, vocab_path, write_wav_pcm16};
pub use split::{split_fewshot, FewShotSplit};
pub use synthetic::{generate_synthetic, SyntheticSpec, Voice, PHONEME_SYMBOLS};

/// One recorded sentence with its transcription and phoneme alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    pub phonemes: Vec<u32>,
    /// Frames per phoneme.
    pub durations: Vec<u32>,
}

impl Utterance {
    /// Frame count under center-padded framing with the given hop.
    pub fn frame_count(&self, hop: usize) -> usize {
        self.waveform.len().div_ceil(hop)
    }

    pub fn total_duration(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// Checks the alignment invariants against the framing used for features.
    pub fn validate(&self, hop: usize) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig(format!(
                "utterance {}: sample rate must be positive",
                self.id
            )));
        }
        if self.phonemes.len() != self.durations.len() {
            return Err(Error::LengthMismatch(format!(
                "utterance {}: {} phonemes but {} durations",
                self.id,
                self.phonemes.len(),
                self.durations.len()
            )));
        }
        let frames = self.frame_count(hop);
        let total = self.total_duration();
        if frames != total {
            return Err(Error::DurationMismatch {
                id: self.id.clone(),
                durations: total,
                frames,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    /// Sorted by utterance id.
    pub utterances: Vec<Utterance>,
    /// Sorted, unique.
    pub speakers: Vec<String>,
    /// Symbol for each phoneme id.
    pub phoneme_vocab: Vec<String>,
}

impl Corpus {
    /// Builds a corpus, sorting utterances by id and deriving the speaker list.
    pub fn new(mut utterances: Vec<Utterance>, phoneme_vocab: Vec<String>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        utterances.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in utterances.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidConfig(format!("duplicate utterance id {}", pair[0].id)));
            }
        }
        let vocab = phoneme_vocab.len();
        for utt in &utterances {
            if let Some(&id) = utt.phonemes.iter().find(|&&p| p as usize >= vocab) {
                return Err(Error::OutOfVocabulary { id, vocab });
            }
        }
        let speakers: BTreeSet<String> = utterances.iter().map(|u| u.speaker_id.clone()).collect();
        Ok(Corpus {
            utterances,
            speakers: speakers.into_iter().collect(),
            phoneme_vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        self.utterances.iter().try_for_each(|u| u.validate(hop))
    }

    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<&Utterance>> {
        let mut map: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
        for utt in &self.utterances {
            map.entry(utt.speaker_id.as_str()).or_default().push(utt);
        }
        map
    }

    pub fn speaker_index(&self, speaker: &str) -> Option<usize> {
        self.speakers.binary_search_by(|s| s.as_str().cmp(speaker)).ok()
    }

    /// Keeps the utterances matching `keep`; errors if none remain.
    pub fn filter(&self, keep: impl Fn(&Utterance) -> bool) -> Result<Corpus> {
        let utts = self.utterances.iter().filter(|u| keep(u)).cloned().collect();
        Corpus::new(utts, self.phoneme_vocab.clone())
    }
}
