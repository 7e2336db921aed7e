//! Cosine-scoring speaker verification: equal error rate, pass rates of
//! synthesized speech and the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, LOG_FLOOR};
use crate::spkrep::pretrained::{enroll, LabeledMels, SpeakerEncoder};
use crate::spkrep::SpeakerRep;

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Trial scores: utterances against their own speaker's enrollment
/// (genuine) and against other speakers' enrollments (impostor).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fraction of impostor scores above the threshold.
    pub far: f64,
    /// Fraction of genuine scores at or below the threshold.
    pub frr: f64,
}

fn check_scores(scores: &ScoreSet) -> Result<()> {
    if scores.genuine.is_empty() {
        return Err(Error::EmptyInput("genuine scores"));
    }
    if scores.impostor.is_empty() {
        return Err(Error::EmptyInput("impostor scores"));
    }
    if scores.genuine.iter().chain(&scores.impostor).any(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig("scores must be finite".into()));
    }
    Ok(())
}

/// Operating points at: just below the lowest score, the midpoints between
/// consecutive distinct scores, and just above the highest score.
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    check_scores(scores)?;
    let mut genuine = scores.genuine.clone();
    let mut impostor = scores.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut thresholds = Vec::with_capacity(all.len() + 1);
    thresholds.push(all[0] - 1e-6);
    thresholds.extend(all.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(all[all.len() - 1] + 1e-6);

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            let gen_le = genuine.partition_point(|&s| s <= t);
            let imp_gt = impostor.len() - impostor.partition_point(|&s| s <= t);
            RocPoint {
                threshold: t,
                far: imp_gt as f64 / ni,
                frr: gen_le as f64 / ng,
            }
        })
        .collect())
}

/// Equal error rate. At the first operating point where FAR no longer
/// exceeds FRR, an exact tie is returned as is; otherwise rates and
/// threshold are interpolated linearly from the previous point.
pub fn compute_eer(scores: &ScoreSet) -> Result<Eer> {
    let roc = roc_points(scores)?;
    let d = |p: &RocPoint| p.far - p.frr;
    let j = roc
        .iter()
        .position(|p| d(p) <= 0.0)
        .expect("the last point has FAR 0 and FRR 1");
    let cur = roc[j];
    if d(&cur) == 0.0 || j == 0 {
        return Ok(Eer {
            eer: cur.far,
            threshold: cur.threshold,
        });
    }
    let prev = roc[j - 1];
    let alpha = d(&prev) / (d(&prev) - d(&cur));
    Ok(Eer {
        eer: prev.far + alpha * (cur.far - prev.far),
        threshold: prev.threshold + alpha * (cur.threshold - prev.threshold),
    })
}

/// Label of the non-speech class added to evaluator training data.
pub const BACKGROUND: &str = "<background>";

/// Seeded non-speech log-mels: every bin drawn independently and uniformly
/// from a per-utterance random sub-range of `[ln LOG_FLOOR, 0]`, 40 to 120 frames.
pub fn noise_mels(count: usize, n_mels: usize, hop: usize, sample_rate: u32, seed: u64) -> Result<Vec<MelSpectrogram>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = LOG_FLOOR.ln();
    (0..count)
        .map(|_| {
            let frames = rng.random_range(40..=120);
            let lo = rng.random_range(floor..-4.0);
            let hi = rng.random_range(lo + 1.0..=0.0);
            let values = Array2::from_shape_fn((frames, n_mels), |_| rng.random_range(lo..=hi));
            MelSpectrogram::new(values, hop, sample_rate)
        })
        .collect()
}

/// Appends a background class of `count` noise utterances, so that the
/// evaluator learns a region for non-speech instead of assigning it to
/// the nearest speaker.
pub fn with_background(data: &LabeledMels, count: usize, seed: u64) -> Result<LabeledMels> {
    let first = data
        .mels
        .first()
        .ok_or(Error::EmptyInput("evaluator training utterances"))?;
    if data.speakers.iter().any(|s| s == BACKGROUND) {
        return Err(Error::InvalidConfig(format!("speaker name {BACKGROUND} is reserved")));
    }
    let mut out = data.clone();
    let label = out.speakers.len();
    out.speakers.push(BACKGROUND.to_string());
    for mel in noise_mels(count, first.n_mels(), first.hop, first.sample_rate, seed)? {
        out.mels.push(mel);
        out.labels.push(label);
    }
    Ok(out)
}

/// Mean of the evaluation encoder's per-utterance embeddings.
pub fn enrollment_embedding(encoder: &SpeakerEncoder, mels: &[MelSpectrogram]) -> Result<SpeakerRep> {
    enroll(encoder, mels)
}

/// Scores every utterance against every enrollment of a speaker in `utterances`.
pub fn score_trials(
    encoder: &SpeakerEncoder,
    utterances: &BTreeMap<String, Vec<MelSpectrogram>>,
    enrollments: &BTreeMap<String, SpeakerRep>,
) -> Result<ScoreSet> {
    let mut set = ScoreSet::default();
    for (speaker, mels) in utterances {
        if !enrollments.contains_key(speaker) {
            return Err(Error::UnknownSpeaker(speaker.clone()));
        }
        for mel in mels {
            let emb = encoder.embed(mel)?;
            for (other, enrolled) in enrollments {
                let s = cosine(&emb.vector, &enrolled.vector)?;
                if other == speaker {
                    set.genuine.push(s);
                } else {
                    set.impostor.push(s);
                }
            }
        }
    }
    Ok(set)
}

/// Fraction of `mels` whose similarity to `enrollment` exceeds `threshold`.
pub fn sv_accuracy(
    mels: &[MelSpectrogram],
    enrollment: &SpeakerRep,
    threshold: f64,
    encoder: &SpeakerEncoder,
) -> Result<f64> {
    if mels.is_empty() {
        return Err(Error::EmptyInput("utterances to verify"));
    }
    let mut pass = 0;
    for mel in mels {
        if cosine(&encoder.embed(mel)?.vector, &enrollment.vector)? > threshold {
            pass += 1;
        }
    }
    Ok(pass as f64 / mels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Active schemes, e.g. `vc+lookup`.
    pub config: String,
    /// Pass rate per few-shot budget.
    pub accuracy: BTreeMap<usize, f64>,
}

/// Pass rates of each configuration at each budget, with the evaluation
/// encoder's EER and threshold on real speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub budgets: Vec<usize>,
    pub eer: f64,
    pub threshold: f64,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("config");
        for k in &self.budgets {
            write!(out, "\tk={k}").expect("writing to a String");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.config);
            for k in &self.budgets {
                match row.accuracy.get(k) {
                    Some(a) => write!(out, "\t{a:.4}"),
                    None => write!(out, "\t-"),
                }
                .expect("writing to a String");
            }
            out.push('\n');
        }
        writeln!(
            out,
            "# evaluator EER {:.4} at threshold {:.6}",
            self.eer, self.threshold
        )
        .expect("writing to a String");
        out
    }

    /// Writes `results.tsv` and `results.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tsv = dir.join("results.tsv");
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let json = dir.join("results.json");
        let body = serde_json::to_string_pretty(self).expect("table serializes");
        std::fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))
    }
}
