//! Run configuration, read from TOML. Every section is optional; omitted
//! fields take their defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clonetts_core::corpus::{generate_synthetic, load_manifest, Corpus, SyntheticSpec};
use clonetts_core::features::FeatureConfig;
use clonetts_core::spkrep::pretrained::PretrainConfig;
use clonetts_core::spkrep::{schemes_label, Scheme};
use clonetts_core::tts::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Manifest file; when absent the synthetic corpus is generated.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// Speakers treated as few-shot targets. Empty means every speaker is
    /// fully available for training.
    pub fewshot: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Reference budgets, one table column each.
    pub budgets: Vec<usize>,
    /// Scheme combinations, one table row each, written like `vc+lookup`.
    pub configs: Vec<String>,
    /// Held-out sentences synthesized per few-shot speaker.
    pub sentences: usize,
    /// Corpus of the evaluation encoder. For a synthetic main corpus this
    /// defaults to the same voices rendered from another seed.
    pub manifest: Option<PathBuf>,
    pub evaluator: PretrainConfig,
    /// Noise utterances in the evaluator's background class.
    pub background: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            budgets: vec![100, 5],
            configs: ["dvec", "xvec", "vc", "lookup", "gst", "vc+lookup"]
                .map(String::from)
                .to_vec(),
            sentences: 10,
            manifest: None,
            evaluator: PretrainConfig::default(),
            background: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides the seeds of the pretraining, training and
    /// evaluator sections and drives the few-shot reference draw.
    pub seed: u64,
    pub out: PathBuf,
    pub schemes: Vec<Scheme>,
    /// Few-shot reference budget used by `train` and `synthesize`.
    pub k: usize,
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub pretrain: PretrainConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            schemes: vec![Scheme::Lookup],
            k: 5,
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            pretrain: PretrainConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Parses `vc+lookup` style labels into a sorted scheme list.
pub fn parse_schemes(label: &str) -> CliResult<Vec<Scheme>> {
    let mut out = label
        .split('+')
        .map(|s| s.parse::<Scheme>().map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the master seed into the sections that carry their own.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.train.seed = seed;
        self.evaluate.evaluator.seed = seed;
        self
    }

    /// Active schemes, sorted and unique.
    pub fn active(&self) -> Vec<Scheme> {
        let mut s = self.schemes.clone();
        s.sort();
        s.dedup();
        s
    }

    pub fn label(&self) -> String {
        schemes_label(&self.schemes)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schemes.is_empty() {
            return Err(CliError::Validation("at least one active scheme is required".into()));
        }
        if self.k == 0 {
            return Err(CliError::Validation("k must be at least 1".into()));
        }
        self.features.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let mismatch = self.features.hop != self.corpus.synthetic.hop
            || self.features.sample_rate != self.corpus.synthetic.sample_rate;
        if mismatch && self.corpus.manifest.is_none() {
            return Err(CliError::Validation(
                "synthetic corpus hop and sample rate must match the feature config".into(),
            ));
        }
        let unique: BTreeSet<&String> = self.corpus.fewshot.iter().collect();
        if unique.len() != self.corpus.fewshot.len() {
            return Err(CliError::Validation("few-shot speakers must be unique".into()));
        }
        for c in &self.evaluate.configs {
            if parse_schemes(c)?.is_empty() {
                return Err(CliError::Validation(format!("empty evaluation config {c:?}")));
            }
        }
        if self.evaluate.budgets.contains(&0) || self.evaluate.sentences == 0 {
            return Err(CliError::Validation(
                "evaluation budgets and sentence count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> CliResult<Corpus> {
        let corpus = match &self.corpus.manifest {
            Some(path) => load_manifest(path, self.features.hop)?,
            None => generate_synthetic(&self.corpus.synthetic)?,
        };
        if let Some(missing) = self.corpus.fewshot.iter().find(|s| corpus.speaker_index(s).is_none()) {
            return Err(CliError::Validation(format!(
                "few-shot speaker {missing} is not in the corpus"
            )));
        }
        Ok(corpus)
    }

    /// Corpus for the evaluation encoder: the configured manifest, or the
    /// synthetic voices rendered with a different seed.
    pub fn evaluator_corpus(&self) -> CliResult<Corpus> {
        match (&self.evaluate.manifest, &self.corpus.manifest) {
            (Some(path), _) => Ok(load_manifest(path, self.features.hop)?),
            (None, None) => {
                let spec = SyntheticSpec {
                    seed: self.corpus.synthetic.seed ^ 0xe7a1_0000_0000_0001,
                    ..self.corpus.synthetic.clone()
                };
                Ok(generate_synthetic(&spec)?)
            }
            (None, Some(_)) => Err(CliError::Validation(
                "a manifest corpus needs evaluate.manifest for the evaluation encoder".into(),
            )),
        }
    }
}
