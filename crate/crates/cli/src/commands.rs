//! The pipeline stages behind each subcommand. Every artifact lands under
//! `RunConfig::out`:
//!
//! ```text
//! encoders/<scheme>.enc            pretrained speaker encoders
//! tts/<schemes>/<k5|full>/         model.ckpt, loss.tsv
//! synth/                           utt000.mel, utt000.wav, ..., reps.json
//! eval/                            evaluator.enc, results.tsv, results.json, observation.txt
//! viz/                             <scheme>.svg, <scheme>.tsv, separation.tsv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clonetts_core::corpus::{read_wav, split_fewshot, write_wav_pcm16, Corpus};
use clonetts_core::features::{write_mel, FeatureExtractor, MelSpectrogram};
use clonetts_core::spkrep::pretrained::{pretrain_classifier, pretrain_vc, LabeledMels, SpeakerEncoder};
use clonetts_core::spkrep::{schemes_label, Scheme};
use clonetts_core::sv::{
    compute_eer, enrollment_embedding, score_trials, sv_accuracy, with_background, ResultRow, ResultsTable,
};
use clonetts_core::tts::train::{model_header, write_loss_log};
use clonetts_core::tts::{prepare_examples, train, LossRecord, TrainedModel};
use clonetts_core::viz::{pca_2d, scatter_export, separation_ratio};
use clonetts_core::vocoder::{griffin_lim, DEFAULT_ITERATIONS};
use clonetts_core::Error;
use log::info;

use crate::config::{parse_schemes, RunConfig};
use crate::error::{CliError, CliResult};

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io(path, e))
}

pub fn encoder_path(out: &Path, scheme: Scheme) -> PathBuf {
    out.join("encoders").join(format!("{scheme}.enc"))
}

/// Directory of the model trained for `schemes` at budget `k`; `full`
/// when the run has no few-shot speakers.
pub fn model_dir(cfg: &RunConfig, schemes: &[Scheme], k: usize) -> PathBuf {
    let budget = if cfg.corpus.fewshot.is_empty() {
        "full".to_string()
    } else {
        format!("k{k}")
    };
    cfg.out.join("tts").join(schemes_label(schemes)).join(budget)
}

pub fn model_path(cfg: &RunConfig, schemes: &[Scheme], k: usize) -> PathBuf {
    model_dir(cfg, schemes, k).join("model.ckpt")
}

fn fewshot_set(cfg: &RunConfig) -> BTreeSet<String> {
    cfg.corpus.fewshot.iter().cloned().collect()
}

/// Speakers available in full: everyone except the few-shot targets.
fn seen_speakers(cfg: &RunConfig, corpus: &Corpus) -> CliResult<Corpus> {
    let fewshot = fewshot_set(cfg);
    Ok(corpus.filter(|u| !fewshot.contains(&u.speaker_id))?)
}

/// Training corpus at budget `k`: seen speakers plus `k` references of each
/// few-shot speaker.
fn training_corpus(cfg: &RunConfig, corpus: &Corpus, k: usize) -> CliResult<Corpus> {
    if cfg.corpus.fewshot.is_empty() {
        return Ok(corpus.clone());
    }
    Ok(split_fewshot(corpus, &fewshot_set(cfg), k, cfg.seed, true)?.train)
}

fn load_encoders(cfg: &RunConfig, schemes: &[Scheme]) -> CliResult<BTreeMap<Scheme, SpeakerEncoder>> {
    let mut encoders = BTreeMap::new();
    for &scheme in schemes.iter().filter(|s| s.is_pretrained()) {
        let path = encoder_path(&cfg.out, scheme);
        if !path.exists() {
            return Err(CliError::Missing(format!(
                "missing encoder checkpoint {} for active scheme {scheme}; run pretrain first",
                path.display()
            )));
        }
        encoders.insert(scheme, SpeakerEncoder::load(&path)?);
    }
    Ok(encoders)
}

fn load_model(cfg: &RunConfig, schemes: &[Scheme], k: usize) -> CliResult<TrainedModel> {
    let path = model_path(cfg, schemes, k);
    if !path.exists() {
        return Err(CliError::Missing(format!("missing TTS checkpoint {}", path.display())));
    }
    Ok(TrainedModel::load(&path)?)
}

/// Trains one encoder per requested pretrained scheme on the seen speakers.
pub fn cmd_pretrain(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let schemes = cfg.active();
    let pretrained: Vec<Scheme> = schemes.iter().copied().filter(|s| s.is_pretrained()).collect();
    if pretrained.is_empty() {
        return Err(Error::NotPretrained(schemes[0]).into());
    }
    let corpus = seen_speakers(cfg, &cfg.load_corpus()?)?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let data = LabeledMels::from_corpus(&corpus, &fx)?;
    create_dir(&cfg.out.join("encoders"))?;
    let mut written = Vec::new();
    for scheme in pretrained {
        let encoder = match scheme {
            Scheme::Vc => {
                let out = pretrain_vc(&data, &cfg.pretrain)?;
                info!("vc: reconstruction L1 {:.4} -> {:.4}", out.initial_l1, out.final_l1);
                out.encoder
            }
            _ => {
                let out = pretrain_classifier(&data, scheme, &cfg.pretrain)?;
                info!("{scheme}: training accuracy {:.3}", out.accuracy);
                out.encoder
            }
        };
        let path = encoder_path(&cfg.out, scheme);
        encoder.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub log: Vec<LossRecord>,
}

/// Trains the acoustic model for the active schemes at budget `cfg.k`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainArtifacts> {
    cfg.validate()?;
    let schemes = cfg.active();
    let encoders = load_encoders(cfg, &schemes)?;
    let full = cfg.load_corpus()?;
    let corpus = training_corpus(cfg, &full, cfg.k)?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let examples = prepare_examples(&corpus, &fx, &encoders)?;
    let header = model_header(&examples, full.phoneme_vocab.len(), &cfg.model, &schemes, &cfg.features)?;
    info!(
        "training {} on {} utterances of {} speakers for {} steps",
        schemes_label(&schemes),
        examples.len(),
        corpus.speakers.len(),
        cfg.train.steps
    );
    let outcome = train(&examples, header, &cfg.train)?;
    let dir = model_dir(cfg, &schemes, cfg.k);
    create_dir(&dir)?;
    let checkpoint = dir.join("model.ckpt");
    outcome.model.save(&checkpoint)?;
    let loss_log = dir.join("loss.tsv");
    write_loss_log(&outcome.log, &loss_log)?;
    Ok(TrainArtifacts {
        checkpoint,
        loss_log,
        log: outcome.log,
    })
}

/// Trains every evaluation configuration at every evaluation budget.
pub fn cmd_train_grid(cfg: &RunConfig) -> CliResult<Vec<TrainArtifacts>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for label in &cfg.evaluate.configs {
        for &k in &cfg.evaluate.budgets {
            let run = RunConfig {
                schemes: parse_schemes(label)?,
                k,
                ..cfg.clone()
            };
            out.push(cmd_train(&run)?);
        }
    }
    Ok(out)
}

/// Reads whitespace-separated phoneme ids, one utterance per non-empty line.
pub fn read_phoneme_file(path: &Path, vocab_size: usize) -> CliResult<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut lines = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|tok| {
                let id: u32 = tok.parse().map_err(|_| {
                    CliError::Validation(format!("{}:{}: bad phoneme id {tok:?}", path.display(), n + 1))
                })?;
                if id as usize >= vocab_size {
                    return Err(Error::OutOfVocabulary { id, vocab: vocab_size }.into());
                }
                Ok(id)
            })
            .collect::<CliResult<Vec<u32>>>()?;
        lines.push(ids);
    }
    if lines.is_empty() {
        return Err(CliError::Validation(format!("{}: no phoneme lines", path.display())));
    }
    Ok(lines)
}

fn reference_mels(fx: &FeatureExtractor, refs: &[PathBuf]) -> CliResult<Vec<MelSpectrogram>> {
    refs.iter()
        .map(|path| {
            let (wave, sr) = read_wav(path)?;
            if sr != fx.config().sample_rate {
                return Err(CliError::Validation(format!(
                    "{}: sample rate {sr} differs from the configured {}",
                    path.display(),
                    fx.config().sample_rate
                )));
            }
            Ok(fx.mel(&wave)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthArtifacts {
    pub mels: Vec<PathBuf>,
    pub wavs: Vec<PathBuf>,
    pub reps: PathBuf,
}

/// Enrolls the target speaker from reference WAVs (and the lookup table when
/// active), then writes a mel file and a Griffin-Lim WAV per input line.
pub fn cmd_synthesize(
    cfg: &RunConfig,
    phonemes: &Path,
    speaker: Option<&str>,
    refs: &[PathBuf],
) -> CliResult<SynthArtifacts> {
    cfg.validate()?;
    let schemes = cfg.active();
    let trained = load_model(cfg, &schemes, cfg.k)?;
    let model = &trained.model;
    if schemes.contains(&Scheme::Lookup) && speaker.is_none() {
        return Err(CliError::Validation(
            "the lookup scheme is active: a speaker name is required".into(),
        ));
    }
    if refs.is_empty() && schemes.iter().any(|&s| s != Scheme::Lookup) {
        return Err(CliError::Validation(
            "missing reference utterances for enrollment".into(),
        ));
    }
    let features = &model.header().features;
    let fx = FeatureExtractor::new(features.clone())?;
    let encoders = load_encoders(cfg, &schemes)?;
    let ref_mels = reference_mels(&fx, refs)?;
    let reps = model.enroll(&encoders, speaker, &ref_mels)?;
    let lines = read_phoneme_file(phonemes, model.header().vocab_size)?;

    let dir = cfg.out.join("synth");
    create_dir(&dir)?;
    let mut out = SynthArtifacts {
        mels: Vec::new(),
        wavs: Vec::new(),
        reps: dir.join("reps.json"),
    };
    let reps_json: BTreeMap<Scheme, &Vec<f32>> = reps.iter().map(|(s, r)| (*s, &r.vector)).collect();
    let body = serde_json::to_string_pretty(&reps_json).expect("representations serialize");
    std::fs::write(&out.reps, body + "\n").map_err(|e| io(&out.reps, e))?;
    for (i, ids) in lines.iter().enumerate() {
        let mel = model.synthesize(ids, &reps)?;
        let mel_path = dir.join(format!("utt{i:03}.mel"));
        write_mel(&mel_path, &mel)?;
        let wave = griffin_lim(&mel, features, DEFAULT_ITERATIONS)?;
        let wav_path = dir.join(format!("utt{i:03}.wav"));
        write_wav_pcm16(&wav_path, &wave, features.sample_rate)?;
        out.mels.push(mel_path);
        out.wavs.push(wav_path);
    }
    Ok(out)
}

fn mels_by_speaker(corpus: &Corpus, fx: &FeatureExtractor) -> CliResult<BTreeMap<String, Vec<MelSpectrogram>>> {
    let mut out: BTreeMap<String, Vec<MelSpectrogram>> = BTreeMap::new();
    for utt in &corpus.utterances {
        out.entry(utt.speaker_id.clone())
            .or_default()
            .push(fx.mel(&utt.waveform)?);
    }
    Ok(out)
}

/// Trains the evaluation encoder: a d-vector classifier on the evaluator
/// corpus plus a background class of noise.
pub fn train_evaluator(cfg: &RunConfig) -> CliResult<SpeakerEncoder> {
    let corpus = cfg.evaluator_corpus()?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let data = with_background(
        &LabeledMels::from_corpus(&corpus, &fx)?,
        cfg.evaluate.background,
        cfg.seed ^ 0xb6,
    )?;
    let out = pretrain_classifier(&data, Scheme::Dvec, &cfg.evaluate.evaluator)?;
    info!("evaluator: training accuracy {:.3}", out.accuracy);
    Ok(out.encoder)
}

#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub table: ResultsTable,
    pub dir: PathBuf,
    /// Whether the best combined configuration reached the best single
    /// scheme at the smallest budget; `None` without both kinds of rows.
    pub combined_at_least_best_single: Option<bool>,
}

/// Speaker-verification pass rates of synthesized speech for every
/// evaluation configuration and budget. The threshold comes from real
/// speech only.
pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<EvalArtifacts> {
    cfg.validate()?;
    if cfg.corpus.fewshot.is_empty() {
        return Err(CliError::Validation(
            "evaluation needs few-shot speakers (corpus.fewshot)".into(),
        ));
    }
    let configs = cfg
        .evaluate
        .configs
        .iter()
        .map(|c| parse_schemes(c))
        .collect::<CliResult<Vec<_>>>()?;
    for schemes in &configs {
        for &k in &cfg.evaluate.budgets {
            let path = model_path(cfg, schemes, k);
            if !path.exists() {
                return Err(CliError::Missing(format!("missing TTS checkpoint {}", path.display())));
            }
        }
    }

    let dir = cfg.out.join("eval");
    create_dir(&dir)?;
    let evaluator = train_evaluator(cfg)?;
    evaluator.save(&dir.join("evaluator.enc"))?;

    let corpus = cfg.load_corpus()?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let real = mels_by_speaker(&corpus, &fx)?;
    let enrollments = real
        .iter()
        .map(|(s, mels)| Ok((s.clone(), enrollment_embedding(&evaluator, mels)?)))
        .collect::<CliResult<BTreeMap<_, _>>>()?;
    let eer = compute_eer(&score_trials(&evaluator, &real, &enrollments)?)?;
    info!(
        "evaluator EER on real speech {:.4} at threshold {:.4}",
        eer.eer, eer.threshold
    );

    let mut rows: Vec<ResultRow> = configs
        .iter()
        .map(|s| ResultRow {
            config: schemes_label(s),
            accuracy: BTreeMap::new(),
        })
        .collect();
    for &k in &cfg.evaluate.budgets {
        let split = split_fewshot(&corpus, &fewshot_set(cfg), k, cfg.seed, true)?;
        let holdout = split.holdout.by_speaker();
        for (row, schemes) in rows.iter_mut().zip(&configs) {
            let trained = load_model(cfg, schemes, k)?;
            let encoders = load_encoders(cfg, schemes)?;
            let (mut passed, mut total) = (0f64, 0usize);
            for (speaker, refs) in &split.refs {
                let ref_mels = refs
                    .iter()
                    .map(|u| fx.mel(&u.waveform))
                    .collect::<Result<Vec<_>, _>>()?;
                let reps = trained.model.enroll(&encoders, Some(speaker), &ref_mels)?;
                let synth = holdout[speaker.as_str()]
                    .iter()
                    .take(cfg.evaluate.sentences)
                    .map(|u| trained.model.synthesize(&u.phonemes, &reps))
                    .collect::<Result<Vec<_>, _>>()?;
                let acc = sv_accuracy(&synth, &enrollments[speaker], eer.threshold, &evaluator)?;
                passed += acc * synth.len() as f64;
                total += synth.len();
            }
            let acc = passed / total as f64;
            info!("{} k={k}: pass rate {acc:.4}", row.config);
            row.accuracy.insert(k, acc);
        }
    }
    let table = ResultsTable {
        budgets: cfg.evaluate.budgets.clone(),
        eer: eer.eer,
        threshold: eer.threshold,
        rows,
    };
    table.write(&dir)?;

    let observation = combined_vs_single(&table, &configs);
    let note = match observation {
        Some((k, combined, single)) => {
            let verdict = if combined >= single {
                "reaches"
            } else {
                "falls short of"
            };
            format!("k={k}: best combined configuration {combined:.4} {verdict} best single scheme {single:.4}\n")
        }
        None => "no combined and single configurations to compare\n".to_string(),
    };
    info!("{}", note.trim_end());
    let path = dir.join("observation.txt");
    std::fs::write(&path, note).map_err(|e| io(&path, e))?;
    Ok(EvalArtifacts {
        table,
        dir,
        combined_at_least_best_single: observation.map(|(_, c, s)| c >= s),
    })
}

/// Best multi-scheme and best single-scheme pass rate at the smallest budget.
fn combined_vs_single(table: &ResultsTable, configs: &[Vec<Scheme>]) -> Option<(usize, f64, f64)> {
    let k = *table.budgets.iter().min()?;
    let best = |multi: bool| {
        table
            .rows
            .iter()
            .zip(configs)
            .filter(|(_, s)| (s.len() > 1) == multi)
            .filter_map(|(r, _)| r.accuracy.get(&k).copied())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    Some((k, best(true)?, best(false)?))
}

#[derive(Debug, Clone)]
pub struct VizArtifacts {
    pub plots: Vec<PathBuf>,
    pub data: Vec<PathBuf>,
    pub separation: PathBuf,
}

/// PCA scatter of per-utterance embeddings for each active pretrained
/// scheme, plus the intra/inter separation ratio per scheme.
pub fn cmd_visualize(cfg: &RunConfig) -> CliResult<VizArtifacts> {
    cfg.validate()?;
    let schemes: Vec<Scheme> = cfg.active().into_iter().filter(|s| s.is_pretrained()).collect();
    if schemes.is_empty() {
        return Err(CliError::Validation(
            "visualize needs at least one active pretrained scheme".into(),
        ));
    }
    let encoders = load_encoders(cfg, &schemes)?;
    let corpus = cfg.load_corpus()?;
    let fx = FeatureExtractor::new(cfg.features.clone())?;
    let mels = corpus
        .utterances
        .iter()
        .map(|u| fx.mel(&u.waveform))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<String> = corpus.utterances.iter().map(|u| u.speaker_id.clone()).collect();

    let dir = cfg.out.join("viz");
    create_dir(&dir)?;
    let mut out = VizArtifacts {
        plots: Vec::new(),
        data: Vec::new(),
        separation: dir.join("separation.tsv"),
    };
    let mut table = String::from("scheme\tseparation\n");
    for (scheme, encoder) in &encoders {
        let embeddings: Vec<Vec<f64>> = encoder
            .embed_batch(&mels)?
            .into_iter()
            .map(|r| r.vector.into_iter().map(f64::from).collect())
            .collect();
        let projected = pca_2d(&embeddings, &labels)?;
        let (svg, tsv) = scatter_export(&projected, &dir.join(scheme.as_str()))?;
        let ratio = separation_ratio(&embeddings, &labels)?;
        info!("{scheme}: separation ratio {ratio:.4}");
        table.push_str(&format!("{scheme}\t{ratio:.6}\n"));
        out.plots.push(svg);
        out.data.push(tsv);
    }
    std::fs::write(&out.separation, table).map_err(|e| io(&out.separation, e))?;
    Ok(out)
}
