//! Reproducibility config shared by every CLI stage.
//!
//! Each stage fingerprints the part of the config it depends on, chained
//! onto its upstream stage: corpus (seed, generator), model (corpus,
//! vocabulary settings, training minus `workers`) and report (model,
//! evaluation, tasks). Artifacts carry their stage fingerprint so a later
//! stage run under a different config is refused.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{EvalConfig, TaskSpec};
use crate::synthgen::SynthSpec;
use crate::trainer::TrainConfig;
use crate::util::fingerprint_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// `strong`, `null` or `clinical`.
    pub preset: String,
    pub records: usize,
    pub history_days: u32,
    /// Overrides the preset's target rate.
    pub target_rate: Option<f64>,
    pub positive_fraction: Option<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            preset: "strong".into(),
            records: 5000,
            history_days: 3650,
            target_rate: None,
            positive_fraction: None,
        }
    }
}

impl GeneratorConfig {
    pub fn spec(&self) -> Result<SynthSpec> {
        let mut spec = match self.preset.as_str() {
            "strong" => SynthSpec::strong(),
            "null" => SynthSpec::null(),
            "clinical" => SynthSpec::clinical(crate::synthgen::STRONG_TARGET_RATE),
            other => {
                return Err(Error::Config(format!(
                    "unknown generator preset '{other}' (expected strong, null or clinical)"
                )))
            }
        };
        if let Some(rate) = self.target_rate {
            spec.programs[spec.target.program].rate = rate;
        }
        if let Some(f) = self.positive_fraction {
            spec.target.positive_fraction = f;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Code levels kept by the bag-of-words grouper.
    pub group_depth: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { group_depth: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives generation and within-day ordering.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub tasks: Vec<TaskSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            generator: GeneratorConfig::default(),
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            tasks: vec![TaskSpec::onset(30), TaskSpec::treatment(30), TaskSpec::workup(30)],
        }
    }
}

fn canonical<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("config serializes")
}

fn chain(parent: Option<&str>, parts: &[Vec<u8>]) -> String {
    let mut bytes = Vec::new();
    if let Some(p) = parent {
        bytes.extend_from_slice(p.as_bytes());
        bytes.push(0);
    }
    for part in parts {
        bytes.extend_from_slice(&(part.len() as u64).to_le_bytes());
        bytes.extend_from_slice(part);
    }
    fingerprint_hex(&bytes)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.elastic_net.validate()?;
        for t in &self.tasks {
            t.validate()?;
        }
        self.generator.spec()?.validate(self.generator.history_days)
    }

    pub fn corpus_fingerprint(&self) -> String {
        chain(None, &[canonical(&self.seed), canonical(&self.generator)])
    }

    pub fn model_fingerprint(&self) -> String {
        let mut train = self.train.clone();
        train.workers = 1;
        chain(Some(&self.corpus_fingerprint()), &[canonical(&self.corpus), canonical(&train)])
    }

    pub fn report_fingerprint(&self) -> String {
        chain(Some(&self.model_fingerprint()), &[canonical(&self.eval), canonical(&self.tasks)])
    }
}

/// Refuses an artifact whose recorded fingerprint differs from `expected`;
/// artifacts without one are accepted.
pub fn check_fingerprint(artifact: &str, found: Option<&str>, expected: &str) -> Result<()> {
    match found {
        Some(f) if !f.is_empty() && f != expected => Err(Error::FingerprintMismatch {
            artifact: artifact.to_string(),
            expected: expected.to_string(),
            found: f.to_string(),
        }),
        _ => Ok(()),
    }
}
