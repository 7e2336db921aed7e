use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use clonetts_cli::commands::{
    cmd_evaluate, cmd_pretrain, cmd_synthesize, cmd_train, cmd_train_grid, cmd_visualize, encoder_path, model_path,
};
use clonetts_cli::config::parse_schemes;
use clonetts_cli::{CliError, RunConfig};
use clonetts_core::corpus::{generate_synthetic, write_wav_pcm16};
use clonetts_core::features::{read_mel, FeatureExtractor};
use clonetts_core::spkrep::pretrained::{enroll, SpeakerEncoder};
use clonetts_core::spkrep::Scheme;
use clonetts_core::tts::TrainedModel;
use sha2::{Digest, Sha256};

const TINY: &str = r#"
seed = 3
schemes = ["dvec", "vc", "lookup"]
k = 2

[corpus]
fewshot = ["spk02"]

[corpus.synthetic]
n_speakers = 3
utts_per_speaker = 6
seed = 1

[pretrain]
steps = 20
width = 32
batch = 8

[model]
hidden = 16
layers = 1
heads = 2
ffn_filter = 16
predictor_filter = 16

[model.gst]
n_tokens = 4
n_heads = 2
ref_channels = [8, 8]
ref_hidden = 8

[train]
steps = 30
batch = 4
warmup = 5

[evaluate]
budgets = [2, 1]
configs = ["dvec", "vc+lookup"]
sentences = 2
background = 4

[evaluate.evaluator]
steps = 20
width = 32
batch = 8
"#;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TINY).unwrap();
    cfg.out = out.to_path_buf();
    let seed = cfg.seed;
    cfg.with_seed(seed)
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// Checksums of every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), digest(&p));
            }
        }
    }
    out
}

#[test]
fn config_parsing_and_validation() {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    assert_eq!(parse_schemes("lookup+vc").unwrap(), vec![Scheme::Vc, Scheme::Lookup]);
    assert!(matches!(parse_schemes("vc+bogus"), Err(CliError::Validation(_))));
    assert!(matches!(
        RunConfig::from_toml("nonsense = 1"),
        Err(CliError::Validation(_))
    ));

    let seeded = cfg.clone().with_seed(42);
    assert_eq!(
        (seeded.pretrain.seed, seeded.train.seed, seeded.evaluate.evaluator.seed),
        (42, 42, 42)
    );

    let dir = tempfile::tempdir().unwrap();
    let mut empty = tiny(dir.path());
    empty.schemes.clear();
    let err = cmd_train(&empty).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
    assert_eq!(err.exit_code(), 1);
    let zero_k = RunConfig {
        k: 0,
        ..tiny(dir.path())
    };
    assert!(matches!(zero_k.validate(), Err(CliError::Validation(_))));
    let mut stranger = tiny(dir.path());
    stranger.corpus.fewshot = vec!["nobody".into()];
    assert!(matches!(stranger.load_corpus(), Err(CliError::Validation(_))));
}

#[test]
fn pretrain_writes_one_checkpoint_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        schemes: vec![Scheme::Dvec, Scheme::Vc],
        ..tiny(dir.path())
    };
    let files = cmd_pretrain(&cfg).unwrap();
    assert_eq!(
        files,
        vec![
            encoder_path(dir.path(), Scheme::Dvec),
            encoder_path(dir.path(), Scheme::Vc)
        ]
    );
    let first: Vec<String> = files.iter().map(|f| digest(f)).collect();
    cmd_pretrain(&cfg).unwrap();
    let second: Vec<String> = files.iter().map(|f| digest(f)).collect();
    assert_eq!(first, second);
    assert!(SpeakerEncoder::load(&files[1]).unwrap().is_frozen());

    let lookup_only = RunConfig {
        schemes: vec![Scheme::Lookup],
        ..cfg.clone()
    };
    let err = cmd_pretrain(&lookup_only).unwrap_err();
    assert_eq!(err.to_string(), "lookup is not pretrained");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());

    // training before pretraining names the missing encoder
    let err = cmd_train(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Missing(_)), "{err}");
    assert_eq!(err.exit_code(), 2);

    cmd_pretrain(&cfg).unwrap();
    let run = cmd_train(&RunConfig {
        schemes: vec![Scheme::Vc, Scheme::Lookup],
        ..cfg.clone()
    })
    .unwrap();
    let model = TrainedModel::load(&run.checkpoint).unwrap();
    assert_eq!(model.model.schemes(), &[Scheme::Vc, Scheme::Lookup]);
    // the few-shot speaker's references are part of training, so it has a table row
    assert_eq!(model.model.header().speakers, vec!["spk00", "spk01", "spk02"]);
    let log = std::fs::read_to_string(&run.loss_log).unwrap();
    assert_eq!(log.lines().count(), cfg.train.steps + 1);
    assert!(run.log.last().unwrap().mel < run.log[0].mel);

    // synthesis from reference WAVs
    let vc_lookup = RunConfig {
        schemes: vec![Scheme::Vc, Scheme::Lookup],
        ..cfg.clone()
    };
    let corpus = generate_synthetic(&cfg.corpus.synthetic).unwrap();
    let refs_dir = dir.path().join("refs");
    std::fs::create_dir_all(&refs_dir).unwrap();
    let refs: Vec<PathBuf> = corpus
        .utterances
        .iter()
        .filter(|u| u.speaker_id == "spk01")
        .take(5)
        .enumerate()
        .map(|(i, u)| {
            let p = refs_dir.join(format!("r{i}.wav"));
            write_wav_pcm16(&p, &u.waveform, u.sample_rate).unwrap();
            p
        })
        .collect();
    let phonemes = dir.path().join("lines.txt");
    std::fs::write(&phonemes, "0 1 2 3\n# comment\n4 5 6\n\n7 8 9 10 11\n").unwrap();
    let synth = cmd_synthesize(&vc_lookup, &phonemes, Some("spk01"), &refs).unwrap();
    assert_eq!(synth.mels.len(), 3);
    assert_eq!(synth.wavs.len(), 3);
    for (m, w) in synth.mels.iter().zip(&synth.wavs) {
        let mel = read_mel(m).unwrap();
        let reader = hound::WavReader::open(w).unwrap();
        assert_eq!(reader.len() as usize, mel.frames() * mel.hop);
    }
    // the vc representation is the mean of the five reference embeddings
    let fx = FeatureExtractor::new(cfg.features.clone()).unwrap();
    let ref_mels: Vec<_> = refs
        .iter()
        .map(|p| fx.mel(&clonetts_core::corpus::read_wav(p).unwrap().0).unwrap())
        .collect();
    let encoder = SpeakerEncoder::load(&encoder_path(dir.path(), Scheme::Vc)).unwrap();
    let expected = enroll(&encoder, &ref_mels).unwrap().vector;
    let reps: BTreeMap<String, Vec<f32>> =
        serde_json::from_str(&std::fs::read_to_string(&synth.reps).unwrap()).unwrap();
    assert_eq!(reps["vc"], expected);
    let before = tree(&dir.path().join("synth"));
    cmd_synthesize(&vc_lookup, &phonemes, Some("spk01"), &refs).unwrap();
    assert_eq!(tree(&dir.path().join("synth")), before);

    let err = cmd_synthesize(&vc_lookup, &phonemes, Some("spk01"), &[]).unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
    let err = cmd_synthesize(&vc_lookup, &phonemes, Some("stranger"), &refs).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    let err = cmd_synthesize(&vc_lookup, &phonemes, None, &refs).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    std::fs::write(&phonemes, "0 99\n").unwrap();
    assert_eq!(
        cmd_synthesize(&vc_lookup, &phonemes, Some("spk01"), &refs)
            .unwrap_err()
            .exit_code(),
        1
    );

    // evaluation needs every configuration at every budget
    let err = cmd_evaluate(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Missing(_)), "{err}");
    let trained = cmd_train_grid(&cfg).unwrap();
    assert_eq!(trained.len(), 4);
    for label in ["dvec", "vc+lookup"] {
        for k in [1, 2] {
            assert!(model_path(&cfg, &parse_schemes(label).unwrap(), k).exists());
        }
    }
    let eval = cmd_evaluate(&cfg).unwrap();
    assert_eq!(eval.table.rows.len(), 2);
    assert_eq!(eval.table.rows[1].config, "vc+lookup");
    for row in &eval.table.rows {
        assert_eq!(row.accuracy.len(), 2);
        assert!(row.accuracy.values().all(|a| (0.0..=1.0).contains(a)));
    }
    assert!((0.0..=0.5).contains(&eval.table.eer));
    assert!(eval.combined_at_least_best_single.is_some());
    let tsv = std::fs::read_to_string(eval.dir.join("results.tsv")).unwrap();
    assert!(tsv.starts_with("config\tk=2\tk=1\n"));
    let before = tree(&eval.dir);
    cmd_evaluate(&cfg).unwrap();
    assert_eq!(tree(&eval.dir), before);

    let viz = cmd_visualize(&cfg).unwrap();
    assert_eq!(viz.plots.len(), 2);
    let sep = std::fs::read_to_string(&viz.separation).unwrap();
    assert_eq!(sep.lines().count(), 3);
    let err = cmd_visualize(&RunConfig {
        schemes: vec![Scheme::Lookup],
        ..cfg.clone()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, TINY).unwrap();
    let exe = env!("CARGO_BIN_EXE_clonetts");
    let run = |args: &[&str]| Command::new(exe).args(args).env("RUST_LOG", "warn").output().unwrap();
    let out = dir.path().join("out");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());

    let ok = run(&[
        "pretrain",
        "--config",
        c,
        "--out",
        o,
        "--schemes",
        "dvec",
        "--seed",
        "4",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(encoder_path(&out, Scheme::Dvec).exists());

    let invalid = run(&["pretrain", "--config", c, "--out", o, "--schemes", "lookup"]);
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("lookup is not pretrained"));

    let missing = run(&["train", "--config", c, "--out", o, "--schemes", "xvec"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_flag = run(&["train", "--frobnicate"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    let bad_config = run(&["train", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(bad_config.status.code(), Some(1));
}
