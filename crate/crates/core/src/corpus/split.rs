use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FewShotSplit {
    /// Seen speakers' utterances, plus the few-shot references when requested.
    pub train: Corpus,
    /// Exactly `k` reference utterances per few-shot speaker.
    pub refs: BTreeMap<String, Vec<Utterance>>,
    /// The few-shot speakers' remaining utterances.
    pub holdout: Corpus,
    pub k: usize,
}

impl FewShotSplit {
    pub fn fewshot_speakers(&self) -> impl Iterator<Item = &str> {
        self.refs.keys().map(String::as_str)
    }
}

/// Picks `k` references per few-shot speaker with a seeded shuffle.
pub fn split_fewshot(
    corpus: &Corpus,
    fewshot_ids: &BTreeSet<String>,
    k: usize,
    seed: u64,
    train_includes_refs: bool,
) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if fewshot_ids.is_empty() {
        return Err(Error::InvalidConfig("no few-shot speakers given".into()));
    }
    let by_speaker = corpus.by_speaker();
    if let Some(missing) = fewshot_ids.iter().find(|s| !by_speaker.contains_key(s.as_str())) {
        return Err(Error::UnknownSpeaker(missing.clone()));
    }
    if fewshot_ids.len() == corpus.speakers.len() && !train_includes_refs {
        return Err(Error::InvalidConfig(
            "every speaker is few-shot and references are excluded: nothing to train on".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refs = BTreeMap::new();
    let mut holdout = Vec::new();
    let mut train = Vec::new();
    for (speaker, utts) in &by_speaker {
        if !fewshot_ids.contains(*speaker) {
            train.extend(utts.iter().map(|&u| u.clone()));
            continue;
        }
        if utts.len() < k + 1 {
            return Err(Error::InsufficientUtterances {
                speaker: speaker.to_string(),
                have: utts.len(),
                need: k + 1,
            });
        }
        let mut order: Vec<usize> = (0..utts.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen: Vec<Utterance> = order[..k].iter().map(|&i| utts[i].clone()).collect();
        chosen.sort_by(|a, b| a.id.cmp(&b.id));
        holdout.extend(order[k..].iter().map(|&i| utts[i].clone()));
        if train_includes_refs {
            train.extend(chosen.iter().cloned());
        }
        refs.insert(speaker.to_string(), chosen);
    }

    Ok(FewShotSplit {
        train: Corpus::new(train, corpus.phoneme_vocab.clone())?,
        refs,
        holdout: Corpus::new(holdout, corpus.phoneme_vocab.clone())?,
        k,
    })
}
